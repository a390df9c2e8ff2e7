// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "stenosis/geometry.hpp"

namespace stenosis::infer {

struct Detection {
  geom::Box box;
  double score = 0.0;  // [0, 1]
};

struct NmsParams {
  double score_thr = 0.5;
  double iou_thr = 0.5;
  std::size_t max_out = 5;
};

/// Greedy suppression in descending score order (stable for ties). Candidates
/// below score_thr are dropped first; a candidate is suppressed when its IoU with
/// a kept detection exceeds iou_thr.
std::vector<Detection> nms(std::span<const Detection> dets, const NmsParams& p = {});

/// Decode every anchor scoring at least score_thr, clip to the image, then nms.
std::vector<Detection> infer(std::span<const double> cls_probs,
                             std::span<const geom::RegressionTarget> reg_preds,
                             const geom::AnchorGrid& grid, double image_w, double image_h,
                             const NmsParams& p = {});

}  // namespace stenosis::infer
