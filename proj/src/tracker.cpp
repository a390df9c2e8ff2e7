// SPDX-License-Identifier: Apache-2.0
#include "stenosis/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stenosis/errors.hpp"

namespace stenosis::track {

namespace {

using cpx = std::complex<double>;

std::size_t odd_window(double side) {
  auto n = static_cast<std::size_t>(std::lround(side));
  n = std::max<std::size_t>(n, 15);
  return n | 1U;
}

// Bilinear sample with replicated borders; (fx, fy) in pixel-index units.
double sample(const ImageU8& img, double fx, double fy) {
  const double maxx = static_cast<double>(img.width - 1);
  const double maxy = static_cast<double>(img.height - 1);
  fx = std::clamp(fx, 0.0, maxx);
  fy = std::clamp(fy, 0.0, maxy);
  const auto x0 = static_cast<std::size_t>(fx);
  const auto y0 = static_cast<std::size_t>(fy);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const double ax = fx - static_cast<double>(x0);
  const double ay = fy - static_cast<double>(y0);
  const double top = (1.0 - ax) * img.at(x0, y0) + ax * img.at(x1, y0);
  const double bot = (1.0 - ax) * img.at(x0, y1) + ax * img.at(x1, y1);
  return (1.0 - ay) * top + ay * bot;
}

std::ptrdiff_t wrap(std::size_t i, std::size_t n) {
  const auto s = static_cast<std::ptrdiff_t>(i);
  return i > n / 2 ? s - static_cast<std::ptrdiff_t>(n) : s;
}

double parabolic(double left, double mid, double right) {
  const double denom = left - 2.0 * mid + right;
  if (std::abs(denom) < 1e-15) return 0.0;
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

}  // namespace

bool TrackState::features(const ImageU8& frame, double cx, double cy,
                          std::array<std::vector<cpx>, kChannels>& spectra) {
  const std::size_t nw = win_w_, nh = win_h_, n = nw * nh;
  const double half_w = static_cast<double>(nw / 2);
  const double half_h = static_cast<double>(nh / 2);
  const double left = cx - half_w - 0.5;
  const double top = cy - half_h - 0.5;
  const bool clipped = left < 0.0 || top < 0.0 || left + static_cast<double>(nw) > static_cast<double>(frame.width) ||
                       top + static_cast<double>(nh) > static_cast<double>(frame.height);

  std::vector<double> intensity(n);
  for (std::size_t v = 0; v < nh; ++v) {
    for (std::size_t u = 0; u < nw; ++u) {
      // window pixel center sits at (left + u + 0.5); index space subtracts 0.5
      intensity[v * nw + u] = sample(frame, left + static_cast<double>(u), top + static_cast<double>(v)) / 255.0;
    }
  }
  std::array<std::vector<double>, kChannels> chan;
  chan[0] = intensity;
  chan[1].resize(n);
  chan[2].resize(n);
  for (std::size_t v = 0; v < nh; ++v) {
    for (std::size_t u = 0; u < nw; ++u) {
      const std::size_t ul = u == 0 ? u : u - 1, ur = std::min(u + 1, nw - 1);
      const std::size_t vu = v == 0 ? v : v - 1, vd = std::min(v + 1, nh - 1);
      chan[1][v * nw + u] = 0.5 * std::abs(intensity[v * nw + ur] - intensity[v * nw + ul]);
      chan[2][v * nw + u] = 0.5 * std::abs(intensity[vd * nw + u] - intensity[vu * nw + u]);
    }
  }
  for (std::size_t c = 0; c < kChannels; ++c) {
    double mean = 0.0;
    for (double x : chan[c]) mean += x;
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) scratch_a_[i] = cpx((chan[c][i] - mean) * cosine_[i], 0.0);
    spectra[c].resize(n);
    fft_->forward(scratch_a_, spectra[c]);
  }
  return clipped;
}

TrackState::Fit TrackState::train(const ImageU8& frame, double cx, double cy) {
  const std::size_t n = win_w_ * win_h_;
  std::array<std::vector<cpx>, kChannels> spec;
  features(frame, cx, cy, spec);
  Fit fit;
  for (std::size_t c = 0; c < kChannels; ++c) {
    auto& h = fit.filters[c];
    h.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      h[i] = target_[i] * std::conj(spec[c][i]) / (std::norm(spec[c][i]) + params_.reg);
    }
    if (params_.spatial_mask) {
      // Restrict the filter's spatial support to the reliable region.
      for (std::size_t i = 0; i < n; ++i) scratch_a_[i] = std::conj(h[i]);
      fft_->inverse(scratch_a_, scratch_b_);
      for (std::size_t i = 0; i < n; ++i) scratch_b_[i] = cpx(scratch_b_[i].real() * mask_[i], 0.0);
      fft_->forward(scratch_b_, scratch_a_);
      for (std::size_t i = 0; i < n; ++i) h[i] = std::conj(scratch_a_[i]);
    }
    for (std::size_t i = 0; i < n; ++i) scratch_a_[i] = h[i] * spec[c][i];
    fft_->inverse(scratch_a_, scratch_b_);
    double peak = 0.0;
    for (const auto& v : scratch_b_) peak = std::max(peak, v.real());
    fit.weights[c] = peak;
  }
  double sum = 0.0;
  for (double w : fit.weights) sum += w;
  for (double& w : fit.weights) w = sum > 0.0 ? w / sum : 1.0 / static_cast<double>(kChannels);
  return fit;
}

ResponseMap TrackState::correlate(const ImageU8& frame, double cx, double cy) {
  const std::size_t nw = win_w_, nh = win_h_, n = nw * nh;
  std::array<std::vector<cpx>, kChannels> spec;
  ResponseMap out;
  out.window_clipped = features(frame, cx, cy, spec);
  for (std::size_t i = 0; i < n; ++i) {
    cpx acc{0.0, 0.0};
    for (std::size_t c = 0; c < kChannels; ++c) acc += weights_[c] * filters_[c][i] * spec[c][i];
    scratch_a_[i] = acc;
  }
  fft_->inverse(scratch_a_, scratch_b_);
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = scratch_b_[i].real();

  const auto [mn, mx] = std::minmax_element(r.begin(), r.end());
  std::size_t peak = 0;
  if (*mx - *mn > 1e-12 * (1.0 + std::abs(*mx))) peak = static_cast<std::size_t>(mx - r.begin());
  const std::size_t pu = peak % nw, pv = peak / nw;
  const double peak_val = r[peak];
  const double sub_x = parabolic(r[pv * nw + (pu + nw - 1) % nw], peak_val, r[pv * nw + (pu + 1) % nw]);
  const double sub_y = parabolic(r[((pv + nh - 1) % nh) * nw + pu], peak_val, r[((pv + 1) % nh) * nw + pu]);
  out.peak_dx = static_cast<double>(wrap(pu, nw)) + sub_x - bias_x_;
  out.peak_dy = static_cast<double>(wrap(pv, nh)) + sub_y - bias_y_;

  const auto half = static_cast<std::ptrdiff_t>(params_.psr_exclusion / 2);
  const double reach_x = 0.5 * params_.psr_region * static_cast<double>(nw);
  const double reach_y = 0.5 * params_.psr_region * static_cast<double>(nh);
  double sum = 0.0, sq = 0.0;
  std::size_t cnt = 0;
  for (std::size_t v = 0; v < nh; ++v) {
    for (std::size_t u = 0; u < nw; ++u) {
      const auto du = wrap((u + nw - pu) % nw, nw);
      const auto dv = wrap((v + nh - pv) % nh, nh);
      if (std::abs(du) <= half && std::abs(dv) <= half) continue;
      if (std::abs(static_cast<double>(wrap(u, nw))) > reach_x || std::abs(static_cast<double>(wrap(v, nh))) > reach_y) {
        continue;
      }
      const double x = r[v * nw + u];
      sum += x;
      sq += x * x;
      ++cnt;
    }
  }
  if (cnt > 1) {
    const double mean = sum / static_cast<double>(cnt);
    const double var = std::max(0.0, sq / static_cast<double>(cnt) - mean * mean);
    const double sd = std::sqrt(var);
    out.psr = sd > 1e-12 ? (peak_val - mean) / sd : 0.0;
  }

  out.map = ImageF(nw, nh);
  out.center_x = nw / 2;
  out.center_y = nh / 2;
  for (std::size_t v = 0; v < nh; ++v) {
    for (std::size_t u = 0; u < nw; ++u) {
      out.map.at((u + out.center_x) % nw, (v + out.center_y) % nh) = r[v * nw + u];
    }
  }
  return out;
}

void TrackState::calibrate(const ImageU8& frame, double cx, double cy) {
  bias_x_ = bias_y_ = 0.0;
  const auto self = correlate(frame, cx, cy);
  bias_x_ = std::clamp(self.peak_dx, -1.0, 1.0);
  bias_y_ = std::clamp(self.peak_dy, -1.0, 1.0);
}

TrackState init_track(const ImageU8& frame, const geom::Box& box, const TrackerParams& params) {
  if (frame.empty()) throw ValidationError("init_track: empty frame");
  const auto c = box.corners();
  const double tol = 1e-9;
  if (c.x1 < -tol || c.y1 < -tol || c.x2 > static_cast<double>(frame.width) + tol ||
      c.y2 > static_cast<double>(frame.height) + tol) {
    throw ValidationError("init_track: box is not inside the frame");
  }
  if (!(params.padding >= 1.0) || !(params.learn_rate > 0.0 && params.learn_rate < 1.0) || !(params.reg > 0.0) ||
      !(params.psr_region > 0.0 && params.psr_region <= 1.0)) {
    throw ValidationError("init_track: invalid tracker parameters");
  }

  TrackState s;
  s.box_ = box;
  s.params_ = params;
  s.win_w_ = odd_window(params.padding * box.w());
  s.win_h_ = odd_window(params.padding * box.h());
  const std::size_t nw = s.win_w_, nh = s.win_h_, n = nw * nh;
  s.fft_ = std::make_unique<Fft2d>(nh, nw);
  s.scratch_a_.resize(n);
  s.scratch_b_.resize(n);

  s.cosine_.resize(n);
  s.mask_.resize(n);
  const double cu = static_cast<double>(nw / 2), cv = static_cast<double>(nh / 2);
  const double mx = params.mask_sigma_factor * box.w(), my = params.mask_sigma_factor * box.h();
  for (std::size_t v = 0; v < nh; ++v) {
    const double hv = std::sin(std::numbers::pi * static_cast<double>(v + 1) / static_cast<double>(nh + 1));
    for (std::size_t u = 0; u < nw; ++u) {
      const double hu = std::sin(std::numbers::pi * static_cast<double>(u + 1) / static_cast<double>(nw + 1));
      s.cosine_[v * nw + u] = hu * hu * hv * hv;
      const double du = (static_cast<double>(u) - cu) / mx;
      const double dv = (static_cast<double>(v) - cv) / my;
      s.mask_[v * nw + u] = std::exp(-0.5 * (du * du + dv * dv));
    }
  }

  const double sigma = std::max(0.5, params.target_sigma_factor * std::sqrt(box.w() * box.h()));
  std::vector<cpx> g(n);
  for (std::size_t v = 0; v < nh; ++v) {
    for (std::size_t u = 0; u < nw; ++u) {
      const auto du = static_cast<double>(wrap(u, nw));
      const auto dv = static_cast<double>(wrap(v, nh));
      g[v * nw + u] = cpx(std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma)), 0.0);
    }
  }
  s.target_.resize(n);
  s.fft_->forward(g, s.target_);

  auto fit = s.train(frame, box.cx(), box.cy());
  s.filters_ = std::move(fit.filters);
  s.weights_ = fit.weights;
  s.calibrate(frame, box.cx(), box.cy());
  return s;
}

TrackResult update_track(TrackState& s, const ImageU8& frame) {
  if (!s.fft_) throw ValidationError("update_track: state not initialized");
  if (frame.empty()) throw ValidationError("update_track: empty frame");
  const ResponseMap resp = s.correlate(frame, s.box_.cx(), s.box_.cy());

  const double w = s.box_.w(), h = s.box_.h();
  const double fw = static_cast<double>(frame.width), fh = static_cast<double>(frame.height);
  double cx = s.box_.cx() + resp.peak_dx;
  double cy = s.box_.cy() + resp.peak_dy;
  const double lo_x = std::min(0.5 * w, 0.5 * fw), hi_x = std::max(fw - 0.5 * w, 0.5 * fw);
  const double lo_y = std::min(0.5 * h, 0.5 * fh), hi_y = std::max(fh - 0.5 * h, 0.5 * fh);
  const double ccx = std::clamp(cx, lo_x, hi_x);
  const double ccy = std::clamp(cy, lo_y, hi_y);
  const bool clamped = ccx != cx || ccy != cy;
  cx = ccx;
  cy = ccy;

  TrackResult out{geom::Box(cx, cy, w, h), resp.psr, false, resp.window_clipped || clamped};
  out.flagged = resp.psr < s.params_.psr_threshold || out.clipped;
  s.box_ = out.box;

  if (!out.flagged) {
    const double lr = s.params_.learn_rate;
    auto fit = s.train(frame, cx, cy);
    for (std::size_t c = 0; c < kChannels; ++c) {
      auto& f = s.filters_[c];
      for (std::size_t i = 0; i < f.size(); ++i) f[i] = (1.0 - lr) * f[i] + lr * fit.filters[c][i];
      s.weights_[c] = (1.0 - lr) * s.weights_[c] + lr * fit.weights[c];
    }
    double sum = 0.0;
    for (double v : s.weights_) sum += v;
    if (sum > 0.0) {
      for (double& v : s.weights_) v /= sum;
    }
    s.calibrate(frame, cx, cy);
  }
  return out;
}

std::vector<std::vector<TrackedBox>> propagate(std::span<const ImageU8> frames, std::size_t ref_index,
                                               std::span<const geom::Box> ref_boxes,
                                               const TrackerParams& params) {
  if (frames.empty()) throw ValidationError("propagate: empty sequence");
  if (ref_index >= frames.size()) throw ValidationError("propagate: reference index out of range");
  std::vector<std::vector<TrackedBox>> out(frames.size());
  for (const auto& b : ref_boxes) out[ref_index].push_back({b, false, 0.0});

  for (const auto& b : ref_boxes) {
    {
      TrackState st = init_track(frames[ref_index], b, params);
      for (std::size_t t = ref_index + 1; t < frames.size(); ++t) {
        const TrackResult r = update_track(st, frames[t]);
        out[t].push_back({r.box, r.flagged, r.psr});
      }
    }
    {
      TrackState st = init_track(frames[ref_index], b, params);
      for (std::size_t t = ref_index; t-- > 0;) {
        const TrackResult r = update_track(st, frames[t]);
        out[t].push_back({r.box, r.flagged, r.psr});
      }
    }
  }
  return out;
}

}  // namespace stenosis::track
