// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "stenosis/geometry.hpp"

namespace stenosis::loss {

inline constexpr double kProbEpsilon = 1e-7;

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

struct ValueGrad {
  double value = 0.0;
  double grad = 0.0;
};

/// Alpha-balanced focal loss on a probability, FL = -a_t (1-p_t)^g log(p_t).
/// p is clamped to [eps, 1-eps]; the returned derivative is the analytic one at
/// the clamped point.
ValueGrad focal_loss(double p, int y, const FocalParams& params = {});

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
ValueGrad smooth_l1(double x) noexcept;

struct LossReport {
  double cls_loss = 0.0;
  double reg_loss = 0.0;
  double l2_penalty = 0.0;
  double total = 0.0;
  double normalizer = 1.0;  // max(1, positives)
};

struct DetectionLoss {
  LossReport report;
  std::vector<double> d_cls_probs;
  std::vector<geom::RegressionTarget> d_reg_preds;
  std::vector<double> d_weights;
};

/// Per-frame detection objective. Focal loss over positive and negative anchors
/// plus smooth-L1 over the four targets of positive anchors, both divided by
/// max(1, positives), plus lambda * sum(w^2) over `weights` (callers pass
/// non-bias parameters only).
DetectionLoss detection_loss(std::span<const double> cls_probs,
                             const geom::MatchAssignment& assignment,
                             std::span<const geom::RegressionTarget> reg_preds,
                             const FocalParams& params, double lambda,
                             std::span<const double> weights);

/// lambda * sum(w^2); gradient 2 lambda w is accumulated into `grad` when nonempty.
double l2_penalty(std::span<const double> weights, double lambda, std::span<double> grad = {});

/// Softmax cross-entropy for one sample; writes dL/dlogits into `grad`.
double softmax_cross_entropy(std::span<const double> logits, int label, std::span<double> grad);

}  // namespace stenosis::loss
