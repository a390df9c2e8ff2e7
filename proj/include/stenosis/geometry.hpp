// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace stenosis::geom {

struct Corners {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

/// Axis-aligned box in continuous pixel coordinates, center form.
/// Origin top-left, x right, y down. Width and height are strictly positive
/// and finite; construction throws ValidationError otherwise.
class Box {
 public:
  Box(double cx, double cy, double w, double h);

  static Box from_corners(double x1, double y1, double x2, double y2);
  static Box from_corners(const Corners& c) { return from_corners(c.x1, c.y1, c.x2, c.y2); }

  double cx() const noexcept { return cx_; }
  double cy() const noexcept { return cy_; }
  double w() const noexcept { return w_; }
  double h() const noexcept { return h_; }
  double area() const noexcept { return w_ * h_; }
  Corners corners() const noexcept {
    return {cx_ - 0.5 * w_, cy_ - 0.5 * h_, cx_ + 0.5 * w_, cy_ + 0.5 * h_};
  }

  friend bool operator==(const Box&, const Box&) = default;

 private:
  double cx_, cy_, w_, h_;
};

struct RegressionTarget {
  double tx = 0, ty = 0, tw = 0, th = 0;
  friend bool operator==(const RegressionTarget&, const RegressionTarget&) = default;
};

struct PyramidLevel {
  double stride = 0;
  double base_size = 0;
};

struct AnchorConfig {
  std::vector<double> ratios;  // h / w
  std::vector<double> scales;
  std::vector<PyramidLevel> levels;

  std::size_t anchors_per_location() const noexcept { return ratios.size() * scales.size(); }

  /// Ratios {1:1, 1:2, 2:1, 4:1}, scales {2^0, 2^(1/2), 2^1}, strides 8..128 with
  /// base sizes 32..512.
  static AnchorConfig retina_default();
};

/// Structure-of-arrays corner view, the layout the batched IoU kernel consumes.
struct CornerArrays {
  std::vector<double> x1, y1, x2, y2;

  std::size_t size() const noexcept { return x1.size(); }
  void reserve(std::size_t n);
  void push_back(const Corners& c);
};

struct LevelRange {
  std::size_t begin = 0, end = 0;
  std::size_t grid_w = 0, grid_h = 0;
};

struct AnchorGrid {
  std::vector<Box> anchors;  // level-major, row-major, then ratio x scale
  std::vector<LevelRange> level_offsets;
  std::size_t per_location = 0;
  CornerArrays corners;

  std::size_t size() const noexcept { return anchors.size(); }
};

enum class AnchorLabel : std::int8_t { negative = 0, positive = 1, ignore = 2 };

struct MatchAssignment {
  std::vector<AnchorLabel> labels;
  std::vector<int> gt_index;                 // -1 unless positive
  std::vector<RegressionTarget> targets;     // zero unless positive
  std::size_t num_positive = 0;

  std::size_t size() const noexcept { return labels.size(); }
};

double iou(const Box& a, const Box& b) noexcept;

AnchorGrid generate_anchors(const AnchorConfig& cfg, std::size_t image_w, std::size_t image_h);

RegressionTarget encode(const Box& gt, const Box& anchor) noexcept;
Box decode(const RegressionTarget& t, const Box& anchor);

/// Clamp to [0,w]x[0,h]. Throws ValidationError when nothing of the box is inside.
Box clip_box(const Box& b, double image_w, double image_h);

MatchAssignment match_anchors(const AnchorGrid& grid, std::span<const Box> gts,
                              double pos_thr = 0.5, double neg_thr = 0.4);

}  // namespace stenosis::geom
