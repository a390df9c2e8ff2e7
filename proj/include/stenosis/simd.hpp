// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference and, on x86-64,
// an AVX2/FMA variant. The variant is picked once at first use from CPUID; set
// STENOSIS_SIMD=scalar in the environment to force the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace stenosis::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;

/// Whether this binary carries the variant and the CPU can execute it.
bool isa_available(Isa isa) noexcept;

Isa active_isa() noexcept;
void set_active_isa(Isa isa);  // throws ValidationError when unavailable

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// out[i] = IoU of box (ax1,ay1,ax2,ay2) with corner arrays element i.
void iou_one_to_many(double ax1, double ay1, double ax2, double ay2,
                     std::span<const double> x1, std::span<const double> y1,
                     std::span<const double> x2, std::span<const double> y2,
                     std::span<double> out);

/// Explicit-ISA entry points, used by the equivalence tests and benchmarks.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
void iou_one_to_many(double ax1, double ay1, double ax2, double ay2, const double* x1,
                     const double* y1, const double* x2, const double* y2, double* out,
                     std::size_t n) noexcept;
}  // namespace scalar

namespace avx2 {
double dot(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
void iou_one_to_many(double ax1, double ay1, double ax2, double ay2, const double* x1,
                     const double* y1, const double* x2, const double* y2, double* out,
                     std::size_t n) noexcept;
}  // namespace avx2

}  // namespace stenosis::simd
