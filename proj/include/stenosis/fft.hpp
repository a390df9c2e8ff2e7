// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace stenosis {

/// Complex 2-D DFT of a fixed rows x cols shape, backed by FFTW. Owns its plans and
/// aligned scratch buffers, so one instance must not be shared across threads.
/// Plan creation is serialized internally.
class Fft2d {
 public:
  using cpx = std::complex<double>;

  Fft2d(std::size_t rows, std::size_t cols);
  ~Fft2d();
  Fft2d(const Fft2d&) = delete;
  Fft2d& operator=(const Fft2d&) = delete;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return rows_ * cols_; }

  void forward(std::span<const cpx> in, std::span<cpx> out);
  /// Normalized inverse: inverse(forward(x)) == x.
  void inverse(std::span<const cpx> in, std::span<cpx> out);

 private:
  void run(void* plan, std::span<const cpx> in, std::span<cpx> out, double scale);

  std::size_t rows_, cols_;
  cpx* in_ = nullptr;
  cpx* out_ = nullptr;
  void* fwd_ = nullptr;
  void* inv_ = nullptr;
};

}  // namespace stenosis
