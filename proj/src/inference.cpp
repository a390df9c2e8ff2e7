// SPDX-License-Identifier: Apache-2.0
#include "stenosis/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stenosis/errors.hpp"
#include "stenosis/simd.hpp"

namespace stenosis::infer {

std::vector<Detection> nms(std::span<const Detection> dets, const NmsParams& p) {
  std::vector<std::size_t> order;
  order.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].score >= p.score_thr) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  const std::size_t n = order.size();
  geom::CornerArrays cand;
  cand.reserve(n);
  for (std::size_t i : order) cand.push_back(dets[i].box.corners());

  std::vector<char> suppressed(n, 0);
  std::vector<double> overlap(n);
  std::vector<Detection> kept;
  for (std::size_t i = 0; i < n && kept.size() < p.max_out; ++i) {
    if (suppressed[i]) continue;
    kept.push_back(dets[order[i]]);
    const std::size_t rest = n - i - 1;
    if (rest == 0 || kept.size() == p.max_out) continue;
    const auto tail = [&](const std::vector<double>& v) {
      return std::span<const double>(v).subspan(i + 1, rest);
    };
    simd::iou_one_to_many(cand.x1[i], cand.y1[i], cand.x2[i], cand.y2[i], tail(cand.x1),
                          tail(cand.y1), tail(cand.x2), tail(cand.y2),
                          std::span<double>(overlap).subspan(i + 1, rest));
    for (std::size_t j = i + 1; j < n; ++j) {
      if (overlap[j] > p.iou_thr) suppressed[j] = 1;
    }
  }
  return kept;
}

std::vector<Detection> infer(std::span<const double> cls_probs,
                             std::span<const geom::RegressionTarget> reg_preds,
                             const geom::AnchorGrid& grid, double image_w, double image_h,
                             const NmsParams& p) {
  if (cls_probs.size() != grid.size() || reg_preds.size() != grid.size()) {
    throw ValidationError("infer: output lengths do not match the anchor grid");
  }
  std::vector<Detection> cands;
  for (std::size_t a = 0; a < grid.size(); ++a) {
    if (!(cls_probs[a] >= p.score_thr)) continue;
    const auto& t = reg_preds[a];
    if (!std::isfinite(t.tx) || !std::isfinite(t.ty) || !std::isfinite(t.tw) || !std::isfinite(t.th)) {
      continue;
    }
    try {
      const geom::Box decoded = geom::decode(t, grid.anchors[a]);
      cands.push_back({geom::clip_box(decoded, image_w, image_h), cls_probs[a]});
    } catch (const ValidationError&) {
      // decoded outside the image or overflowed; nothing to report
    }
  }
  return nms(cands, p);
}

}  // namespace stenosis::infer
