// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <string>

#include "stenosis/errors.hpp"
#include "stenosis/simd.hpp"

namespace stenosis::simd {

#ifndef STENOSIS_HAVE_AVX2
namespace avx2 {
// Never selected: isa_available(avx2) is false on builds without the variant.
double dot(const double* a, const double* b, std::size_t n) noexcept { return scalar::dot(a, b, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept { scalar::axpy(alpha, x, y, n); }
void iou_one_to_many(double ax1, double ay1, double ax2, double ay2, const double* x1,
                     const double* y1, const double* x2, const double* y2, double* out,
                     std::size_t n) noexcept {
  scalar::iou_one_to_many(ax1, ay1, ax2, ay2, x1, y1, x2, y2, out, n);
}
}  // namespace avx2
#endif

namespace {

Isa detect() noexcept {
  if (const char* env = std::getenv("STENOSIS_SIMD"); env && std::string(env) == "scalar") {
    return Isa::scalar;
  }
  return isa_available(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() noexcept {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ValidationError(std::string(what) + ": length mismatch");
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) noexcept {
  if (isa == Isa::scalar) return true;
#if defined(STENOSIS_HAVE_AVX2)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) throw ValidationError("simd: " + std::string(isa_name(isa)) + " not available");
  current().store(isa, std::memory_order_relaxed);
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_same(a.size(), b.size(), "dot");
  return active_isa() == Isa::avx2 ? avx2::dot(a.data(), b.data(), a.size())
                                   : scalar::dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same(x.size(), y.size(), "axpy");
  if (active_isa() == Isa::avx2) {
    avx2::axpy(alpha, x.data(), y.data(), x.size());
  } else {
    scalar::axpy(alpha, x.data(), y.data(), x.size());
  }
}

void iou_one_to_many(double ax1, double ay1, double ax2, double ay2,
                     std::span<const double> x1, std::span<const double> y1,
                     std::span<const double> x2, std::span<const double> y2,
                     std::span<double> out) {
  const std::size_t n = out.size();
  check_same(x1.size(), n, "iou_one_to_many");
  check_same(y1.size(), n, "iou_one_to_many");
  check_same(x2.size(), n, "iou_one_to_many");
  check_same(y2.size(), n, "iou_one_to_many");
  if (active_isa() == Isa::avx2) {
    avx2::iou_one_to_many(ax1, ay1, ax2, ay2, x1.data(), y1.data(), x2.data(), y2.data(), out.data(), n);
  } else {
    scalar::iou_one_to_many(ax1, ay1, ax2, ay2, x1.data(), y1.data(), x2.data(), y2.data(), out.data(), n);
  }
}

}  // namespace stenosis::simd
