// SPDX-License-Identifier: Apache-2.0
#include "stenosis/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stenosis/errors.hpp"

namespace stenosis::loss {

ValueGrad focal_loss(double p, int y, const FocalParams& params) {
  if (y != 0 && y != 1) throw ValidationError("focal_loss: label must be 0 or 1");
  p = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
  const double a = params.alpha;
  const double g = params.gamma;
  if (y == 1) {
    const double q = 1.0 - p;
    const double mod = std::pow(q, g);
    const double lp = std::log(p);
    const double dmod = g == 0.0 ? 0.0 : g * std::pow(q, g - 1.0);
    return {-a * mod * lp, a * dmod * lp - a * mod / p};
  }
  // y = 0 mirrors with p_t = 1 - p and weight 1 - alpha.
  const double q = 1.0 - p;
  const double mod = std::pow(p, g);
  const double lq = std::log(q);
  const double dmod = g == 0.0 ? 0.0 : g * std::pow(p, g - 1.0);
  return {-(1.0 - a) * mod * lq, -(1.0 - a) * (dmod * lq - mod / q)};
}

ValueGrad smooth_l1(double x) noexcept {
  const double ax = std::abs(x);
  if (ax < 1.0) return {0.5 * x * x, x};
  return {ax - 0.5, x > 0.0 ? 1.0 : -1.0};
}

double l2_penalty(std::span<const double> weights, double lambda, std::span<double> grad) {
  if (!grad.empty() && grad.size() != weights.size()) {
    throw ValidationError("l2_penalty: gradient length mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    sum += weights[i] * weights[i];
    if (!grad.empty()) grad[i] += 2.0 * lambda * weights[i];
  }
  return lambda * sum;
}

DetectionLoss detection_loss(std::span<const double> cls_probs,
                             const geom::MatchAssignment& assignment,
                             std::span<const geom::RegressionTarget> reg_preds,
                             const FocalParams& params, double lambda,
                             std::span<const double> weights) {
  const std::size_t n = assignment.size();
  if (cls_probs.size() != n || reg_preds.size() != n) {
    throw ValidationError("detection_loss: expected " + std::to_string(n) +
                          " anchors, got probs " + std::to_string(cls_probs.size()) +
                          " / regressions " + std::to_string(reg_preds.size()));
  }

  DetectionLoss out;
  out.d_cls_probs.assign(n, 0.0);
  out.d_reg_preds.assign(n, geom::RegressionTarget{});
  out.d_weights.assign(weights.size(), 0.0);

  std::size_t positives = 0;
  for (auto l : assignment.labels) positives += l == geom::AnchorLabel::positive ? 1 : 0;
  const double norm = std::max<double>(1.0, static_cast<double>(positives));
  const double inv = 1.0 / norm;

  double cls = 0.0;
  double reg = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const auto label = assignment.labels[a];
    if (label == geom::AnchorLabel::ignore) continue;
    const int y = label == geom::AnchorLabel::positive ? 1 : 0;
    const ValueGrad f = focal_loss(cls_probs[a], y, params);
    cls += f.value;
    out.d_cls_probs[a] = f.grad * inv;
    if (y == 1) {
      const auto& t = assignment.targets[a];
      const auto& r = reg_preds[a];
      const ValueGrad sx = smooth_l1(r.tx - t.tx);
      const ValueGrad sy = smooth_l1(r.ty - t.ty);
      const ValueGrad sw = smooth_l1(r.tw - t.tw);
      const ValueGrad sh = smooth_l1(r.th - t.th);
      reg += sx.value + sy.value + sw.value + sh.value;
      out.d_reg_preds[a] = {sx.grad * inv, sy.grad * inv, sw.grad * inv, sh.grad * inv};
    }
  }

  out.report.normalizer = norm;
  out.report.cls_loss = cls * inv;
  out.report.reg_loss = reg * inv;
  out.report.l2_penalty = l2_penalty(weights, lambda, out.d_weights);
  out.report.total = out.report.cls_loss + out.report.reg_loss + out.report.l2_penalty;
  return out;
}

double softmax_cross_entropy(std::span<const double> logits, int label, std::span<double> grad) {
  const std::size_t k = logits.size();
  if (k == 0 || label < 0 || static_cast<std::size_t>(label) >= k || grad.size() != k) {
    throw ValidationError("softmax_cross_entropy: bad label or sizes");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  const double log_z = std::log(z) + m;
  for (std::size_t i = 0; i < k; ++i) grad[i] = std::exp(logits[i] - log_z);
  grad[static_cast<std::size_t>(label)] -= 1.0;
  return log_z - logits[static_cast<std::size_t>(label)];
}

}  // namespace stenosis::loss
