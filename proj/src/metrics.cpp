// SPDX-License-Identifier: Apache-2.0
#include "stenosis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "stenosis/errors.hpp"

namespace stenosis::metrics {

FrameEval match_detections(std::span<const infer::Detection> dets, std::span<const geom::Box> gts,
                           const EvalParams& p) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].score >= p.score_thr) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  if (order.size() > p.max_dets) order.resize(p.max_dets);

  FrameEval out;
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d : order) {
    std::size_t best = gts.size();
    double best_iou = p.iou_thr;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = geom::iou(dets[d].box, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best < gts.size()) {
      taken[best] = true;
      out.matches.emplace_back(d, best);
    }
  }
  out.tp = out.matches.size();
  out.fp = order.size() - out.tp;
  out.fn = gts.size() - out.tp;
  return out;
}

MetricsReport aggregate(std::span<const FrameResult> frames) {
  if (frames.empty()) throw ValidationError("aggregate: no frames");
  std::size_t tp = 0, fp = 0, fn = 0;
  // sequence -> (reference frame has ground truth, reference frame has a hit)
  std::map<std::string, std::pair<bool, bool>> seqs;
  for (const auto& f : frames) {
    tp += f.eval.tp;
    fp += f.eval.fp;
    fn += f.eval.fn;
    auto& s = seqs[f.sequence];
    if (f.is_reference && f.eval.tp + f.eval.fn > 0) {
      s.first = true;
      s.second = s.second || f.eval.tp > 0;
    }
  }
  MetricsReport r;
  r.frames = frames.size();
  r.sequences = seqs.size();
  if (tp + fn > 0) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tp + fp > 0) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  std::size_t eligible = 0, hit = 0;
  for (const auto& [id, s] : seqs) {
    if (!s.first) continue;
    ++eligible;
    hit += s.second ? 1 : 0;
  }
  if (eligible > 0) r.at_least_one = static_cast<double>(hit) / static_cast<double>(eligible);
  return r;
}

namespace {

std::optional<MeanStd> mean_std(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  MeanStd m;
  m.count = v.size();
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

}  // namespace

FoldSummary summarize_folds(std::span<const MetricsReport> folds) {
  std::vector<double> rec, prec, alo;
  for (const auto& f : folds) {
    if (f.recall) rec.push_back(*f.recall);
    if (f.precision) prec.push_back(*f.precision);
    if (f.at_least_one) alo.push_back(*f.at_least_one);
  }
  return {mean_std(rec), mean_std(prec), mean_std(alo)};
}

ClassificationReport classification_metrics(std::span<const std::vector<double>> pred_probs,
                                            std::span<const int> labels) {
  if (pred_probs.empty()) throw ValidationError("classification_metrics: empty input");
  if (pred_probs.size() != labels.size()) {
    throw ValidationError("classification_metrics: predictions and labels differ in length");
  }
  const std::size_t k = pred_probs.front().size();
  if (k == 0) throw ValidationError("classification_metrics: empty distribution");

  std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
  std::size_t correct = 0;
  double ce = 0.0;
  for (std::size_t i = 0; i < pred_probs.size(); ++i) {
    const auto& row = pred_probs[i];
    if (row.size() != k) throw ValidationError("classification_metrics: ragged distributions");
    double sum = 0.0;
    for (double v : row) {
      if (!(v >= 0.0)) throw ValidationError("classification_metrics: negative probability");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError("classification_metrics: row " + std::to_string(i) + " sums to " +
                            std::to_string(sum));
    }
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ValidationError("classification_metrics: label out of range");
    }
    const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const auto truth = static_cast<std::size_t>(y);
    if (pred == truth) {
      ++correct;
      ++tp[truth];
    } else {
      ++fp[pred];
      ++fn[truth];
    }
    ce -= std::log(std::max(row[truth], 1e-15));
  }

  ClassificationReport r;
  const auto n = static_cast<double>(pred_probs.size());
  r.accuracy = static_cast<double>(correct) / n;
  r.cross_entropy = ce / n;
  double f1_sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;  // class absent from labels and predictions
    f1_sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++classes;
  }
  r.macro_f1 = classes ? f1_sum / static_cast<double>(classes) : 0.0;
  return r;
}

}  // namespace stenosis::metrics
