// SPDX-License-Identifier: Apache-2.0
#include "stenosis/tensor.hpp"

#include <algorithm>

#include "stenosis/errors.hpp"
#include "stenosis/simd.hpp"

namespace stenosis::nn::ops {

namespace {

// col is [in_c * k * k][oh * ow]
void im2col(std::span<const double> img, std::size_t h, std::size_t w, const ConvGeometry& g,
            std::size_t oh, std::size_t ow, std::vector<double>& col) {
  const std::size_t k = g.kernel;
  const std::size_t ohw = oh * ow;
  col.assign(g.in_c * k * k * ohw, 0.0);
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const double* src = img.data() + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = col.data() + ((c * k + ky) * k + kx) * ohw;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dst[oy * ow + ox] = src[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im(const std::vector<double>& col, std::size_t h, std::size_t w, const ConvGeometry& g,
            std::size_t oh, std::size_t ow, std::span<double> img) {
  const std::size_t k = g.kernel;
  const std::size_t ohw = oh * ow;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    double* dst = img.data() + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* src = col.data() + ((c * k + ky) * k + kx) * ohw;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dst[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const ConvGeometry& g, std::span<const double> weights,
              std::span<const double> bias) {
  if (x.c != g.in_c) throw ValidationError("conv2d: channel mismatch");
  if (weights.size() != g.out_c * g.fan_in() || bias.size() != g.out_c) {
    throw ValidationError("conv2d: parameter size mismatch");
  }
  const std::size_t oh = g.out_size(x.h), ow = g.out_size(x.w), ohw = oh * ow;
  const std::size_t kk = g.fan_in();
  Tensor y(x.n, g.out_c, oh, ow);
  std::vector<double> col;
  for (std::size_t i = 0; i < x.n; ++i) {
    im2col(x.sample(i), x.h, x.w, g, oh, ow, col);
    auto out = y.sample(i);
    for (std::size_t co = 0; co < g.out_c; ++co) {
      std::span<double> row = out.subspan(co * ohw, ohw);
      std::fill(row.begin(), row.end(), bias[co]);
      const double* wrow = weights.data() + co * kk;
      for (std::size_t j = 0; j < kk; ++j) {
        simd::axpy(wrow[j], std::span<const double>(col.data() + j * ohw, ohw), row);
      }
    }
  }
  return y;
}

Tensor conv2d_backward(const Tensor& x, const ConvGeometry& g, std::span<const double> weights,
                       const Tensor& dy, std::span<double> dw, std::span<double> db, bool want_dx) {
  const std::size_t oh = g.out_size(x.h), ow = g.out_size(x.w), ohw = oh * ow;
  if (dy.n != x.n || dy.c != g.out_c || dy.h != oh || dy.w != ow) {
    throw ValidationError("conv2d_backward: gradient shape mismatch");
  }
  const std::size_t kk = g.fan_in();
  Tensor dx;
  if (want_dx) dx = Tensor(x.n, x.c, x.h, x.w);
  std::vector<double> col, dcol;
  for (std::size_t i = 0; i < x.n; ++i) {
    const auto grad = dy.sample(i);
    if (!dw.empty()) {
      im2col(x.sample(i), x.h, x.w, g, oh, ow, col);
      for (std::size_t co = 0; co < g.out_c; ++co) {
        const auto grow = grad.subspan(co * ohw, ohw);
        for (std::size_t j = 0; j < kk; ++j) {
          dw[co * kk + j] += simd::dot(grow, std::span<const double>(col.data() + j * ohw, ohw));
        }
      }
    }
    if (!db.empty()) {
      for (std::size_t co = 0; co < g.out_c; ++co) {
        double s = 0.0;
        for (std::size_t p = 0; p < ohw; ++p) s += grad[co * ohw + p];
        db[co] += s;
      }
    }
    if (want_dx) {
      dcol.assign(kk * ohw, 0.0);
      for (std::size_t co = 0; co < g.out_c; ++co) {
        const auto grow = grad.subspan(co * ohw, ohw);
        const double* wrow = weights.data() + co * kk;
        for (std::size_t j = 0; j < kk; ++j) {
          simd::axpy(wrow[j], grow, std::span<double>(dcol.data() + j * ohw, ohw));
        }
      }
      col2im(dcol, x.h, x.w, g, oh, ow, dx.sample(i));
    }
  }
  return dx;
}

void relu_inplace(Tensor& t) {
  for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const Tensor& y, Tensor& dy) {
  if (!y.same_shape(dy)) throw ValidationError("relu_backward: shape mismatch");
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(y.data[i] > 0.0)) dy.data[i] = 0.0;
  }
}

Tensor upsample2x(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (out_h > 2 * x.h || out_w > 2 * x.w) throw ValidationError("upsample2x: target too large");
  Tensor y(x.n, x.c, out_h, out_w);
  for (std::size_t i = 0; i < x.n; ++i) {
    for (std::size_t c = 0; c < x.c; ++c) {
      for (std::size_t yy = 0; yy < out_h; ++yy) {
        for (std::size_t xx = 0; xx < out_w; ++xx) y.at(i, c, yy, xx) = x.at(i, c, yy / 2, xx / 2);
      }
    }
  }
  return y;
}

Tensor upsample2x_backward(const Tensor& dy, std::size_t in_h, std::size_t in_w) {
  Tensor dx(dy.n, dy.c, in_h, in_w);
  for (std::size_t i = 0; i < dy.n; ++i) {
    for (std::size_t c = 0; c < dy.c; ++c) {
      for (std::size_t yy = 0; yy < dy.h; ++yy) {
        for (std::size_t xx = 0; xx < dy.w; ++xx) dx.at(i, c, yy / 2, xx / 2) += dy.at(i, c, yy, xx);
      }
    }
  }
  return dx;
}

Tensor global_avg_pool(const Tensor& x) {
  Tensor y(x.n, x.c, 1, 1);
  const double inv = 1.0 / static_cast<double>(x.plane());
  for (std::size_t i = 0; i < x.n; ++i) {
    for (std::size_t c = 0; c < x.c; ++c) {
      const double* p = x.data.data() + (i * x.c + c) * x.plane();
      double s = 0.0;
      for (std::size_t k = 0; k < x.plane(); ++k) s += p[k];
      y.at(i, c, 0, 0) = s * inv;
    }
  }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& dy, std::size_t h, std::size_t w) {
  Tensor dx(dy.n, dy.c, h, w);
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t i = 0; i < dy.n; ++i) {
    for (std::size_t c = 0; c < dy.c; ++c) {
      double* p = dx.data.data() + (i * dy.c + c) * h * w;
      std::fill(p, p + h * w, dy.at(i, c, 0, 0) * inv);
    }
  }
  return dx;
}

Tensor linear(const Tensor& x, std::size_t out, std::span<const double> weights,
              std::span<const double> bias) {
  const std::size_t in = x.sample_size();
  if (weights.size() != out * in || bias.size() != out) throw ValidationError("linear: parameter size mismatch");
  Tensor y(x.n, out, 1, 1);
  for (std::size_t i = 0; i < x.n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      y.at(i, o, 0, 0) = bias[o] + simd::dot(weights.subspan(o * in, in), x.sample(i));
    }
  }
  return y;
}

Tensor linear_backward(const Tensor& x, std::size_t out, std::span<const double> weights,
                       const Tensor& dy, std::span<double> dw, std::span<double> db, bool want_dx) {
  const std::size_t in = x.sample_size();
  Tensor dx;
  if (want_dx) dx = Tensor(x.n, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dy.at(i, o, 0, 0);
      if (!dw.empty()) simd::axpy(g, x.sample(i), dw.subspan(o * in, in));
      if (!db.empty()) db[o] += g;
      if (want_dx) simd::axpy(g, weights.subspan(o * in, in), dx.sample(i));
    }
  }
  return dx;
}

}  // namespace stenosis::nn::ops
