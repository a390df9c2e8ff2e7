// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stenosis/geometry.hpp"
#include "stenosis/inference.hpp"

namespace stenosis::metrics {

/// Detection evaluation protocol: a detection counts when its score is at least
/// score_thr, it is among the max_dets best, and its IoU with an unmatched
/// ground truth is strictly greater than iou_thr.
struct EvalParams {
  double iou_thr = 0.2;
  double score_thr = 0.5;
  std::size_t max_dets = 5;
};

struct FrameEval {
  std::size_t tp = 0, fp = 0, fn = 0;
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (det index, gt index)
};

FrameEval match_detections(std::span<const infer::Detection> dets, std::span<const geom::Box> gts,
                           const EvalParams& p = {});

struct FrameResult {
  std::string sequence;
  bool is_reference = false;
  FrameEval eval;
};

/// Ratios that have an empty denominator stay absent.
struct MetricsReport {
  std::optional<double> recall;
  std::optional<double> precision;
  std::optional<double> at_least_one;
  std::size_t frames = 0;
  std::size_t sequences = 0;
};

/// Micro-averaged recall and precision over all frames. at_least_one is the
/// fraction of sequences, among those whose reference frame carries ground truth,
/// where the reference frame has a true positive. Throws on empty input.
MetricsReport aggregate(std::span<const FrameResult> frames);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};

struct FoldSummary {
  std::optional<MeanStd> recall, precision, at_least_one;
};

FoldSummary summarize_folds(std::span<const MetricsReport> folds);

struct ClassificationReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double cross_entropy = 0.0;
};

/// Each row must be a distribution (sums to 1 within 1e-6, entries >= 0).
ClassificationReport classification_metrics(std::span<const std::vector<double>> pred_probs,
                                            std::span<const int> labels);

}  // namespace stenosis::metrics
