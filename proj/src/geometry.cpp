// SPDX-License-Identifier: Apache-2.0
#include "stenosis/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stenosis/errors.hpp"
#include "stenosis/simd.hpp"

namespace stenosis::geom {

Box::Box(double cx, double cy, double w, double h) : cx_(cx), cy_(cy), w_(w), h_(h) {
  if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(w) || !std::isfinite(h)) {
    throw ValidationError("box: non-finite coordinate");
  }
  if (!(w > 0.0) || !(h > 0.0)) {
    throw ValidationError("box: width and height must be positive (got " + std::to_string(w) +
                          " x " + std::to_string(h) + ")");
  }
}

Box Box::from_corners(double x1, double y1, double x2, double y2) {
  return Box(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1);
}

AnchorConfig AnchorConfig::retina_default() {
  AnchorConfig cfg;
  cfg.ratios = {1.0, 0.5, 2.0, 4.0};
  cfg.scales = {1.0, std::sqrt(2.0), 2.0};
  for (int p = 3; p <= 7; ++p) {
    const double stride = std::ldexp(1.0, p);
    cfg.levels.push_back({stride, 4.0 * stride});
  }
  return cfg;
}

void CornerArrays::reserve(std::size_t n) {
  x1.reserve(n);
  y1.reserve(n);
  x2.reserve(n);
  y2.reserve(n);
}

void CornerArrays::push_back(const Corners& c) {
  x1.push_back(c.x1);
  y1.push_back(c.y1);
  x2.push_back(c.x2);
  y2.push_back(c.y2);
}

double iou(const Box& a, const Box& b) noexcept {
  const Corners ca = a.corners();
  const Corners cb = b.corners();
  const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

AnchorGrid generate_anchors(const AnchorConfig& cfg, std::size_t image_w, std::size_t image_h) {
  if (cfg.levels.empty()) throw ValidationError("generate_anchors: no pyramid levels");
  if (cfg.ratios.empty() || cfg.scales.empty()) {
    throw ValidationError("generate_anchors: ratios and scales must be nonempty");
  }
  if (image_w == 0 || image_h == 0) throw ValidationError("generate_anchors: empty image");
  for (double r : cfg.ratios) {
    if (!(r > 0.0)) throw ValidationError("generate_anchors: ratio must be positive");
  }
  for (double s : cfg.scales) {
    if (!(s > 0.0)) throw ValidationError("generate_anchors: scale must be positive");
  }

  AnchorGrid grid;
  grid.per_location = cfg.anchors_per_location();

  std::size_t total = 0;
  for (const auto& lv : cfg.levels) {
    if (!(lv.stride > 0.0) || !(lv.base_size > 0.0)) {
      throw ValidationError("generate_anchors: stride and base size must be positive");
    }
    const auto gw = static_cast<std::size_t>(std::ceil(static_cast<double>(image_w) / lv.stride));
    const auto gh = static_cast<std::size_t>(std::ceil(static_cast<double>(image_h) / lv.stride));
    total += gw * gh * grid.per_location;
  }
  grid.anchors.reserve(total);
  grid.corners.reserve(total);

  // Shapes are shared by every location of a level.
  std::vector<std::pair<double, double>> shapes;
  for (const auto& lv : cfg.levels) {
    shapes.clear();
    for (double r : cfg.ratios) {
      const double sr = std::sqrt(r);
      for (double s : cfg.scales) shapes.emplace_back(lv.base_size * s / sr, lv.base_size * s * sr);
    }
    LevelRange range;
    range.begin = grid.anchors.size();
    range.grid_w = static_cast<std::size_t>(std::ceil(static_cast<double>(image_w) / lv.stride));
    range.grid_h = static_cast<std::size_t>(std::ceil(static_cast<double>(image_h) / lv.stride));
    for (std::size_t j = 0; j < range.grid_h; ++j) {
      const double cy = (static_cast<double>(j) + 0.5) * lv.stride;
      for (std::size_t i = 0; i < range.grid_w; ++i) {
        const double cx = (static_cast<double>(i) + 0.5) * lv.stride;
        for (const auto& [w, h] : shapes) {
          grid.anchors.emplace_back(cx, cy, w, h);
          grid.corners.push_back(grid.anchors.back().corners());
        }
      }
    }
    range.end = grid.anchors.size();
    grid.level_offsets.push_back(range);
  }
  return grid;
}

RegressionTarget encode(const Box& gt, const Box& anchor) noexcept {
  return {(gt.cx() - anchor.cx()) / anchor.w(), (gt.cy() - anchor.cy()) / anchor.h(),
          std::log(gt.w() / anchor.w()), std::log(gt.h() / anchor.h())};
}

Box decode(const RegressionTarget& t, const Box& anchor) {
  return Box(anchor.cx() + t.tx * anchor.w(), anchor.cy() + t.ty * anchor.h(),
             anchor.w() * std::exp(t.tw), anchor.h() * std::exp(t.th));
}

Box clip_box(const Box& b, double image_w, double image_h) {
  const Corners c = b.corners();
  const double x1 = std::clamp(c.x1, 0.0, image_w);
  const double y1 = std::clamp(c.y1, 0.0, image_h);
  const double x2 = std::clamp(c.x2, 0.0, image_w);
  const double y2 = std::clamp(c.y2, 0.0, image_h);
  if (!(x2 > x1) || !(y2 > y1)) throw ValidationError("clip_box: box lies outside the image");
  return Box::from_corners(x1, y1, x2, y2);
}

namespace {
constexpr double kTieTolerance = 1e-12;
}  // namespace

MatchAssignment match_anchors(const AnchorGrid& grid, std::span<const Box> gts, double pos_thr,
                              double neg_thr) {
  if (!(neg_thr >= 0.0 && neg_thr <= pos_thr && pos_thr <= 1.0)) {
    throw ValidationError("match_anchors: need 0 <= neg_thr <= pos_thr <= 1");
  }
  const std::size_t n = grid.size();
  MatchAssignment out;
  out.labels.assign(n, AnchorLabel::negative);
  out.gt_index.assign(n, -1);
  out.targets.assign(n, RegressionTarget{});
  if (gts.empty() || n == 0) return out;

  std::vector<double> best_iou(n, -1.0);
  std::vector<int> best_gt(n, -1);
  std::vector<double> scratch(n);
  std::vector<std::vector<double>> per_gt;
  per_gt.reserve(gts.size());

  const auto& c = grid.corners;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const Corners gc = gts[g].corners();
    simd::iou_one_to_many(gc.x1, gc.y1, gc.x2, gc.y2, c.x1, c.y1, c.x2, c.y2, scratch);
    for (std::size_t a = 0; a < n; ++a) {
      if (scratch[a] > best_iou[a]) {
        best_iou[a] = scratch[a];
        best_gt[a] = static_cast<int>(g);
      }
    }
    per_gt.push_back(scratch);
  }

  for (std::size_t a = 0; a < n; ++a) {
    if (best_iou[a] >= pos_thr) {
      out.labels[a] = AnchorLabel::positive;
      out.gt_index[a] = best_gt[a];
    } else if (best_iou[a] >= neg_thr) {
      out.labels[a] = AnchorLabel::ignore;
    }
  }

  // Every ground truth keeps at least one positive: its best anchor, skipping
  // anchors already forced for an earlier ground truth. Overlaps equal up to
  // rounding count as ties and go to the lowest index.
  std::vector<bool> forced(n, false);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    double best = -1.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (!forced[a]) best = std::max(best, per_gt[g][a]);
    }
    std::size_t arg = n;
    for (std::size_t a = 0; a < n && arg == n; ++a) {
      if (!forced[a] && per_gt[g][a] >= best - kTieTolerance) arg = a;
    }
    if (arg == n) continue;
    forced[arg] = true;
    out.labels[arg] = AnchorLabel::positive;
    out.gt_index[arg] = static_cast<int>(g);
  }

  for (std::size_t a = 0; a < n; ++a) {
    if (out.labels[a] == AnchorLabel::positive) {
      out.targets[a] = encode(gts[static_cast<std::size_t>(out.gt_index[a])], grid.anchors[a]);
      ++out.num_positive;
    }
  }
  return out;
}

}  // namespace stenosis::geom
