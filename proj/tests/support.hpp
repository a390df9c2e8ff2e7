// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations and fixtures shared by the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stenosis/data.hpp"
#include "stenosis/geometry.hpp"
#include "stenosis/image.hpp"
#include "stenosis/inference.hpp"
#include "stenosis/toynet.hpp"
#include "stenosis/train.hpp"

namespace oracle {

using stenosis::geom::Box;

// Overlap of two boxes by counting covered cells of a grid with `cells`
// cells per unit. Exact for integer corners when cells == 1.
inline double raster_iou(const Box& a, const Box& b, int cells = 1) {
  const auto ca = a.corners(), cb = b.corners();
  const double x0 = std::min(ca.x1, cb.x1), y0 = std::min(ca.y1, cb.y1);
  const double x1 = std::max(ca.x2, cb.x2), y1 = std::max(ca.y2, cb.y2);
  const double step = 1.0 / cells;
  long inter = 0, uni = 0;
  for (double y = y0 + 0.5 * step; y < y1; y += step) {
    for (double x = x0 + 0.5 * step; x < x1; x += step) {
      const bool in_a = x >= ca.x1 && x < ca.x2 && y >= ca.y1 && y < ca.y2;
      const bool in_b = x >= cb.x1 && x < cb.x2 && y >= cb.y1 && y < cb.y2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Long-double overlap from sorted edge lists.
inline long double exact_iou(const Box& a, const Box& b) {
  const long double ax1 = (long double)a.cx() - a.w() / 2.0L, ax2 = (long double)a.cx() + a.w() / 2.0L;
  const long double ay1 = (long double)a.cy() - a.h() / 2.0L, ay2 = (long double)a.cy() + a.h() / 2.0L;
  const long double bx1 = (long double)b.cx() - b.w() / 2.0L, bx2 = (long double)b.cx() + b.w() / 2.0L;
  const long double by1 = (long double)b.cy() - b.h() / 2.0L, by2 = (long double)b.cy() + b.h() / 2.0L;
  const long double iw = std::max(0.0L, std::min(ax2, bx2) - std::max(ax1, bx1));
  const long double ih = std::max(0.0L, std::min(ay2, by2) - std::max(ay1, by1));
  const long double inter = iw * ih;
  const long double uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
  return uni > 0 ? inter / uni : 0.0L;
}

// Textbook quadratic greedy suppression: pick the best remaining candidate
// (lowest input index among equal scores), drop everything overlapping it.
inline std::vector<stenosis::infer::Detection> brute_nms(const std::vector<stenosis::infer::Detection>& dets,
                                                         double score_thr, double iou_thr, std::size_t max_out) {
  std::vector<bool> alive(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) alive[i] = dets[i].score >= score_thr;
  std::vector<stenosis::infer::Detection> out;
  while (out.size() < max_out) {
    long best = -1;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && (best < 0 || dets[i].score > dets[static_cast<std::size_t>(best)].score)) best = static_cast<long>(i);
    }
    if (best < 0) break;
    const auto& keep = dets[static_cast<std::size_t>(best)];
    out.push_back(keep);
    alive[static_cast<std::size_t>(best)] = false;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && exact_iou(keep.box, dets[i].box) > iou_thr) alive[i] = false;
    }
  }
  return out;
}

// Clustered boxes with coarse scores so that ties and overlaps are common.
inline std::vector<stenosis::infer::Detection> random_detections(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> pos(0, 200), size(10, 80);
  std::uniform_int_distribution<int> score(0, 40);
  std::vector<stenosis::infer::Detection> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({Box(pos(rng), pos(rng), size(rng), size(rng)), score(rng) / 40.0});
  return out;
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Compares backprop against central differences of a fixed random linear
// functional of the network outputs. Checks every `every`-th parameter entry.
inline double toynet_gradient_error(stenosis::nn::ToyNet& net, std::size_t size, std::uint64_t seed,
                                    std::size_t every = 1) {
  using namespace stenosis::nn;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Tensor x(2, net.config().in_channels, size, size);
  for (double& v : x.data) v = g(rng);
  const bool det = net.config().kind == NetKind::detector;

  std::vector<std::vector<double>> cp, cr;
  Tensor cl;
  {
    const auto cache = net.forward(x);
    if (det) {
      const auto out = ToyNet::detector_output(cache);
      for (std::size_t i = 0; i < 2; ++i) {
        cp.emplace_back(out.probs[i].size());
        cr.emplace_back(out.regs[i].size());
        for (double& v : cp.back()) v = g(rng);
        for (double& v : cr.back()) v = g(rng);
      }
    } else {
      cl = cache.logits;
      for (double& v : cl.data) v = g(rng);
    }
  }
  const auto objective = [&]() {
    const auto cache = net.forward(x);
    double f = 0.0;
    if (det) {
      const auto out = ToyNet::detector_output(cache);
      for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t k = 0; k < cp[i].size(); ++k) f += cp[i][k] * out.probs[i][k];
        for (std::size_t k = 0; k < cr[i].size(); ++k) f += cr[i][k] * out.regs[i][k];
      }
    } else {
      for (std::size_t k = 0; k < cl.size(); ++k) f += cl.data[k] * cache.logits.data[k];
    }
    return f;
  };

  net.zero_grad();
  const auto cache = net.forward(x);
  if (det) {
    net.backward_detector(cache, cp, cr);
  } else {
    net.backward_classifier(cache, cl);
  }

  double worst = 0.0;
  std::size_t counter = 0;
  for (auto& p : net.params()) {
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      if (counter++ % every != 0) continue;
      const double v0 = p.value[k];
      const double h = 1e-5 * std::max(1.0, std::abs(v0));
      p.value[k] = v0 + h;
      const double up = objective();
      p.value[k] = v0 - h;
      const double down = objective();
      p.value[k] = v0;
      const double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, rel_err(p.grad[k], fd, 1e-6));
    }
  }
  return worst;
}

}  // namespace oracle

namespace fixtures {

// Single optimal-contrast frame with its lesion boxes.
inline stenosis::nn::DetectionSample lesion_frame(std::uint64_t seed, std::size_t size = 64) {
  stenosis::data::SynthParams p;
  p.width = p.height = size;
  p.view = seed % 2 ? stenosis::data::View::LCA : stenosis::data::View::RCA;
  p.phases = {0, 0, 1, 0};
  p.seed = seed;
  p.vessel_width = 5.0;
  p.narrowing = 0.3;
  p.noise = 4.0;
  const auto s = stenosis::data::synth_sequence(p);
  return {stenosis::to_float(s.frames[0]), s.manifest.frames[0].boxes};
}

// Gaussian blob on one half of a noisy frame. Label 0 = left, 1 = right.
inline stenosis::nn::LabeledImage blob_frame(std::mt19937_64& rng, std::size_t size = 32) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 8.0);
  const int label = unit(rng) < 0.5 ? 0 : 1;
  const double half = static_cast<double>(size) / 2.0;
  const double sigma = 0.08 * static_cast<double>(size);
  const double margin = 2.0 * sigma;
  const double cx = (label == 0 ? 0.0 : half) + margin + unit(rng) * (half - 2.0 * margin);
  const double cy = margin + unit(rng) * (static_cast<double>(size) - 2.0 * margin);
  stenosis::ImageF im(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      im.at(x, y) = 100.0 + 90.0 * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) + noise(rng);
    }
  }
  return {std::move(im), label};
}

// Frames cut from a larger synthetic canvas (its grain moves with the scene), shifted so that content
// moves by (shift_x[t], shift_y[t]) relative to frame 0. Bilinear for
// fractional shifts; integer shifts copy pixels exactly.
struct ShiftedSequence {
  std::vector<stenosis::ImageU8> frames;
  std::vector<double> shift_x, shift_y;
  stenosis::geom::Box box0{0, 0, 1, 1};  // lesion box in frame 0
  stenosis::geom::Box box_at(std::size_t t) const {
    return {box0.cx() + shift_x[t], box0.cy() + shift_y[t], box0.w(), box0.h()};
  }
};

inline ShiftedSequence shifted_sequence(std::uint64_t seed, std::size_t n, bool integer_steps, double noise,
                                        std::size_t size = 128, double max_step = 8.0, double texture = 6.0) {
  const std::size_t margin = 32;
  const double cs = static_cast<double>(size + 2 * margin);
  stenosis::data::SynthParams p;
  p.width = p.height = size + 2 * margin;
  p.phases = {0, 0, 1, 0};
  p.noise = texture;
  p.vessel_width = 5.0;
  p.seed = seed;
  // put the lesion on the centerline point closest to the canvas center
  const auto probe = stenosis::data::synth_sequence(p);
  std::size_t best = 0;
  double best_d = 1e300;
  for (std::size_t i = 0; i < probe.centerline.size(); ++i) {
    const double d = std::hypot(probe.centerline[i].first - cs / 2, probe.centerline[i].second - cs / 2);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  const double last = static_cast<double>(probe.centerline.size() - 1);
  p.stenosis_count = 1;
  p.stenosis_positions = {std::clamp(static_cast<double>(best) / last, 0.05, 0.95)};
  const auto canvas_seq = stenosis::data::synth_sequence(p);
  const auto canvas = stenosis::to_float(canvas_seq.frames[0]);
  const auto& lesion = canvas_seq.lesion_boxes_at_rest.at(0);

  std::mt19937_64 rng(seed * 7919 + 1);
  std::uniform_real_distribution<double> step(-max_step, max_step);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ShiftedSequence out;
  const auto m = static_cast<double>(margin);
  const double ox = std::clamp(lesion.cx() - static_cast<double>(size) / 2, 0.0, 2 * m);
  const double oy = std::clamp(lesion.cy() - static_cast<double>(size) / 2, 0.0, 2 * m);
  out.box0 = {lesion.cx() - ox, lesion.cy() - oy, lesion.w(), lesion.h()};
  // the box center keeps a search window's distance from the frame edges
  const double lo = 1.25 * lesion.w() + 1.0, hi = static_cast<double>(size) - lo;
  const auto allowed = [&](double o, double sh, double c) { return o - sh >= 0 && o - sh <= 2 * m && c + sh >= lo && c + sh <= hi; };
  double sx = 0, sy = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (t > 0) {
      double dx = step(rng), dy = step(rng);
      if (integer_steps) {
        dx = std::round(dx);
        dy = std::round(dy);
      }
      if (!allowed(ox, sx + dx, out.box0.cx())) dx = allowed(ox, sx - dx, out.box0.cx()) ? -dx : 0.0;
      if (!allowed(oy, sy + dy, out.box0.cy())) dy = allowed(oy, sy - dy, out.box0.cy()) ? -dy : 0.0;
      sx += dx;
      sy += dy;
    }
    out.shift_x.push_back(sx);
    out.shift_y.push_back(sy);
    stenosis::ImageF f(size, size);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double fx = static_cast<double>(x) + ox - sx, fy = static_cast<double>(y) + oy - sy;
        const auto x0 = static_cast<std::size_t>(std::floor(fx)), y0 = static_cast<std::size_t>(std::floor(fy));
        const double ax = fx - std::floor(fx), ay = fy - std::floor(fy);
        const std::size_t x1 = std::min(x0 + 1, canvas.width - 1), y1 = std::min(y0 + 1, canvas.height - 1);
        const double v = (1 - ay) * ((1 - ax) * canvas.at(x0, y0) + ax * canvas.at(x1, y0)) +
                         ay * ((1 - ax) * canvas.at(x0, y1) + ax * canvas.at(x1, y1));
        f.at(x, y) = v + noise * gauss(rng);
      }
    }
    out.frames.push_back(stenosis::to_u8(f));
  }
  return out;
}

inline stenosis::ImageU8 noise_frame(std::uint64_t seed, std::size_t size = 128) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(180.0, 25.0);
  stenosis::ImageF f(size, size);
  for (double& v : f.pixels) v = gauss(rng);
  return stenosis::to_u8(f);
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("stenosis_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace fixtures
