// SPDX-License-Identifier: Apache-2.0
#include "stenosis/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <mutex>
#include <new>

#include "stenosis/errors.hpp"

namespace stenosis {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

Fft2d::Fft2d(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
  if (rows == 0 || cols == 0) throw ValidationError("fft: empty shape");
  std::lock_guard lock(planner_mutex());
  in_ = reinterpret_cast<cpx*>(fftw_malloc(sizeof(fftw_complex) * size()));
  out_ = reinterpret_cast<cpx*>(fftw_malloc(sizeof(fftw_complex) * size()));
  if (!in_ || !out_) {
    fftw_free(in_);
    fftw_free(out_);
    throw std::bad_alloc();
  }
  auto* fi = reinterpret_cast<fftw_complex*>(in_);
  auto* fo = reinterpret_cast<fftw_complex*>(out_);
  const int r = static_cast<int>(rows);
  const int c = static_cast<int>(cols);
  fwd_ = fftw_plan_dft_2d(r, c, fi, fo, FFTW_FORWARD, FFTW_ESTIMATE);
  inv_ = fftw_plan_dft_2d(r, c, fi, fo, FFTW_BACKWARD, FFTW_ESTIMATE);
}

Fft2d::~Fft2d() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(inv_));
  fftw_free(in_);
  fftw_free(out_);
}

void Fft2d::run(void* plan, std::span<const cpx> in, std::span<cpx> out, double scale) {
  if (in.size() != size() || out.size() != size()) throw ValidationError("fft: buffer size mismatch");
  std::copy(in.begin(), in.end(), in_);
  fftw_execute(static_cast<fftw_plan>(plan));
  if (scale == 1.0) {
    std::copy(out_, out_ + size(), out.begin());
  } else {
    std::transform(out_, out_ + size(), out.begin(), [scale](const cpx& v) { return v * scale; });
  }
}

void Fft2d::forward(std::span<const cpx> in, std::span<cpx> out) { run(fwd_, in, out, 1.0); }

void Fft2d::inverse(std::span<const cpx> in, std::span<cpx> out) {
  run(inv_, in, out, 1.0 / static_cast<double>(size()));
}

}  // namespace stenosis
