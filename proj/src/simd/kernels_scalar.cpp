// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include "stenosis/simd.hpp"

namespace stenosis::simd::scalar {

double dot(const double* a, const double* b, std::size_t n) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void iou_one_to_many(double ax1, double ay1, double ax2, double ay2, const double* x1,
                     const double* y1, const double* x2, const double* y2, double* out,
                     std::size_t n) noexcept {
  const double area_a = (ax2 - ax1) * (ay2 - ay1);
  for (std::size_t i = 0; i < n; ++i) {
    const double iw = std::max(0.0, std::min(ax2, x2[i]) - std::max(ax1, x1[i]));
    const double ih = std::max(0.0, std::min(ay2, y2[i]) - std::max(ay1, y1[i]));
    const double inter = iw * ih;
    const double uni = area_a + (x2[i] - x1[i]) * (y2[i] - y1[i]) - inter;
    out[i] = uni > 0.0 ? inter / uni : 0.0;
  }
}

}  // namespace stenosis::simd::scalar
