// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stenosis::nn {

/// Dense NCHW tensor of doubles.
struct Tensor {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, fill) {}

  std::size_t plane() const noexcept { return h * w; }
  std::size_t sample_size() const noexcept { return c * h * w; }
  std::size_t size() const noexcept { return data.size(); }

  double& at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) {
    return data[((i * c + ch) * h + y) * w + x];
  }
  double at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) const {
    return data[((i * c + ch) * h + y) * w + x];
  }
  std::span<double> sample(std::size_t i) { return {data.data() + i * sample_size(), sample_size()}; }
  std::span<const double> sample(std::size_t i) const {
    return {data.data() + i * sample_size(), sample_size()};
  }
  bool same_shape(const Tensor& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

struct ConvGeometry {
  std::size_t in_c = 0, out_c = 0, kernel = 3, stride = 1, pad = 1;

  std::size_t out_size(std::size_t in) const noexcept { return (in + 2 * pad - kernel) / stride + 1; }
  std::size_t fan_in() const noexcept { return in_c * kernel * kernel; }
};

namespace ops {

/// weights laid out [out_c][in_c][k][k]
Tensor conv2d(const Tensor& x, const ConvGeometry& g, std::span<const double> weights,
              std::span<const double> bias);

/// Accumulates into dw / db when nonempty; returns dx only when `want_dx`.
Tensor conv2d_backward(const Tensor& x, const ConvGeometry& g, std::span<const double> weights,
                       const Tensor& dy, std::span<double> dw, std::span<double> db, bool want_dx);

void relu_inplace(Tensor& t);
/// dy masked by y > 0, in place.
void relu_backward_inplace(const Tensor& y, Tensor& dy);

/// Nearest-neighbour 2x upsampling cropped to (out_h, out_w).
Tensor upsample2x(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor upsample2x_backward(const Tensor& dy, std::size_t in_h, std::size_t in_w);

Tensor global_avg_pool(const Tensor& x);  // -> [n, c, 1, 1]
Tensor global_avg_pool_backward(const Tensor& dy, std::size_t h, std::size_t w);

/// weights [out][in]; x viewed as [n, in]
Tensor linear(const Tensor& x, std::size_t out, std::span<const double> weights,
              std::span<const double> bias);
Tensor linear_backward(const Tensor& x, std::size_t out, std::span<const double> weights,
                       const Tensor& dy, std::span<double> dw, std::span<double> db, bool want_dx);

}  // namespace ops
}  // namespace stenosis::nn
