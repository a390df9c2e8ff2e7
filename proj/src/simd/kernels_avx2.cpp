// SPDX-License-Identifier: Apache-2.0
// Compiled with -mavx2 -mfma. Only reached through dispatch after a CPUID check.
#include <immintrin.h>

#include "stenosis/simd.hpp"

namespace stenosis::simd::avx2 {

namespace {

inline double hsum(__m256d v) noexcept {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) noexcept {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  if (i + 4 <= n) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    i += 4;
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void iou_one_to_many(double ax1, double ay1, double ax2, double ay2, const double* x1,
                     const double* y1, const double* x2, const double* y2, double* out,
                     std::size_t n) noexcept {
  const __m256d vax1 = _mm256_set1_pd(ax1);
  const __m256d vay1 = _mm256_set1_pd(ay1);
  const __m256d vax2 = _mm256_set1_pd(ax2);
  const __m256d vay2 = _mm256_set1_pd(ay2);
  const __m256d zero = _mm256_setzero_pd();
  const double area_a_s = (ax2 - ax1) * (ay2 - ay1);
  const __m256d area_a = _mm256_set1_pd(area_a_s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d bx1 = _mm256_loadu_pd(x1 + i);
    const __m256d by1 = _mm256_loadu_pd(y1 + i);
    const __m256d bx2 = _mm256_loadu_pd(x2 + i);
    const __m256d by2 = _mm256_loadu_pd(y2 + i);
    const __m256d iw = _mm256_max_pd(zero, _mm256_sub_pd(_mm256_min_pd(vax2, bx2), _mm256_max_pd(vax1, bx1)));
    const __m256d ih = _mm256_max_pd(zero, _mm256_sub_pd(_mm256_min_pd(vay2, by2), _mm256_max_pd(vay1, by1)));
    const __m256d inter = _mm256_mul_pd(iw, ih);
    const __m256d area_b = _mm256_mul_pd(_mm256_sub_pd(bx2, bx1), _mm256_sub_pd(by2, by1));
    const __m256d uni = _mm256_sub_pd(_mm256_add_pd(area_a, area_b), inter);
    const __m256d ratio = _mm256_div_pd(inter, uni);
    const __m256d valid = _mm256_cmp_pd(uni, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(ratio, valid));
  }
  if (i < n) scalar::iou_one_to_many(ax1, ay1, ax2, ay2, x1 + i, y1 + i, x2 + i, y2 + i, out + i, n - i);
}

}  // namespace stenosis::simd::avx2
