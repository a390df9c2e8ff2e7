// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "doctest.h"
#include "stenosis/errors.hpp"
#include "stenosis/metrics.hpp"

using namespace stenosis;
using geom::Box;
using infer::Detection;

TEST_CASE("match_detections hand fixture") {
  const std::vector<Box> gts{Box(20, 20, 10, 10), Box(60, 60, 10, 10)};
  const std::vector<Detection> dets{
      {Box(21, 20, 10, 10), 0.9},  // hit gt 0
      {Box(20, 21, 10, 10), 0.8},  // gt 0 already taken
      {Box(90, 90, 10, 10), 0.7},  // nothing
      {Box(60, 60, 10, 10), 0.3},  // below score threshold
  };
  const auto e = metrics::match_detections(dets, gts);
  CHECK(e.tp == 1);
  CHECK(e.fp == 2);
  CHECK(e.fn == 1);
  REQUIRE(e.matches.size() == 1);
  CHECK(e.matches[0] == std::pair<std::size_t, std::size_t>{0, 0});

  metrics::EvalParams one;
  one.max_dets = 1;
  const auto e1 = metrics::match_detections(dets, gts, one);
  CHECK(e1.tp == 1);
  CHECK(e1.fp == 0);
  CHECK(e1.fn == 1);
}

TEST_CASE("match_detections uses a strict iou threshold") {
  // corners (0,0,10,10) vs (5,0,15,10) overlap exactly 1/3
  const std::vector<Box> gts{Box::from_corners(0, 0, 10, 10)};
  const std::vector<Detection> dets{{Box::from_corners(5, 0, 15, 10), 0.9}};
  metrics::EvalParams p;
  p.iou_thr = 1.0 / 3.0;
  CHECK(metrics::match_detections(dets, gts, p).tp == 0);
  p.iou_thr = 0.3;
  CHECK(metrics::match_detections(dets, gts, p).tp == 1);
}

TEST_CASE("match_detections picks the best unmatched gt") {
  const std::vector<Box> gts{Box(20, 20, 10, 10), Box(24, 20, 10, 10)};
  const std::vector<Detection> dets{{Box(24, 20, 10, 10), 0.9}, {Box(21, 20, 10, 10), 0.8}};
  const auto e = metrics::match_detections(dets, gts);
  REQUIRE(e.matches.size() == 2);
  CHECK(e.matches[0].second == 1);
  CHECK(e.matches[1].second == 0);
}

TEST_CASE("aggregate hand fixture") {
  std::vector<metrics::FrameResult> frames;
  frames.push_back({"a", true, {1, 0, 0, {}}});
  frames.push_back({"a", false, {0, 1, 1, {}}});
  frames.push_back({"b", true, {0, 2, 1, {}}});
  frames.push_back({"c", true, {0, 1, 0, {}}});  // no ground truth on the reference frame
  const auto r = metrics::aggregate(frames);
  CHECK(r.frames == 4);
  CHECK(r.sequences == 3);
  CHECK(*r.recall == doctest::Approx(1.0 / 3.0));
  CHECK(*r.precision == doctest::Approx(1.0 / 5.0));
  CHECK(*r.at_least_one == doctest::Approx(0.5));
  CHECK_THROWS_AS(metrics::aggregate(std::vector<metrics::FrameResult>{}), ValidationError);
}

TEST_CASE("aggregate leaves empty ratios absent") {
  std::vector<metrics::FrameResult> frames{{"a", true, {0, 0, 0, {}}}};
  const auto r = metrics::aggregate(frames);
  CHECK(!r.recall);
  CHECK(!r.precision);
  CHECK(!r.at_least_one);
}

TEST_CASE("fold summary") {
  std::vector<metrics::MetricsReport> folds(3);
  folds[0].recall = 0.5;
  folds[1].recall = 0.7;
  folds[2].recall = 0.9;
  folds[0].precision = 0.4;
  const auto s = metrics::summarize_folds(folds);
  CHECK(s.recall->mean == doctest::Approx(0.7));
  CHECK(s.recall->std == doctest::Approx(0.2));
  CHECK(s.recall->count == 3);
  CHECK(s.precision->std == 0.0);
  CHECK(!s.at_least_one);
}

TEST_CASE("classification metrics hand fixture") {
  const std::vector<std::vector<double>> probs{{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}, {0.3, 0.7}};
  const std::vector<int> labels{0, 1, 1, 0};
  const auto r = metrics::classification_metrics(probs, labels);
  CHECK(r.accuracy == 0.5);
  CHECK(r.macro_f1 == doctest::Approx(0.5));
  CHECK(r.cross_entropy ==
        doctest::Approx(-(std::log(0.9) + std::log(0.8) + std::log(0.4) + std::log(0.3)) / 4.0));

  const std::vector<std::vector<double>> perfect{{1.0, 0.0}, {0.0, 1.0}};
  const std::vector<int> pl{0, 1};
  const auto p = metrics::classification_metrics(perfect, pl);
  CHECK(p.accuracy == 1.0);
  CHECK(p.macro_f1 == 1.0);
  CHECK(p.cross_entropy == doctest::Approx(0.0));
}

TEST_CASE("classification metrics validation") {
  const std::vector<int> one{0};
  CHECK_THROWS_AS(metrics::classification_metrics(std::vector<std::vector<double>>{{0.5, 0.6}}, one),
                  ValidationError);
  CHECK_THROWS_AS(metrics::classification_metrics(std::vector<std::vector<double>>{{1.2, -0.2}}, one),
                  ValidationError);
  CHECK_THROWS_AS(metrics::classification_metrics(std::vector<std::vector<double>>{{0.5, 0.5}}, std::vector<int>{2}),
                  ValidationError);
  CHECK_THROWS_AS(metrics::classification_metrics(std::vector<std::vector<double>>{}, std::vector<int>{}),
                  ValidationError);
}

TEST_CASE("two detections on one lesion") {
  // x shifts giving IoU 0.9 and 0.5 against a 10x10 box
  const std::vector<Box> gts{Box(20, 20, 10, 10)};
  const std::vector<Detection> dets{{Box(20 + 10.0 / 19.0, 20, 10, 10), 0.8}, {Box(20 + 10.0 / 3.0, 20, 10, 10), 0.9}};
  CHECK(geom::iou(dets[0].box, gts[0]) == doctest::Approx(0.9));
  CHECK(geom::iou(dets[1].box, gts[0]) == doctest::Approx(0.5));
  const auto e = metrics::match_detections(dets, gts);
  CHECK(e.tp == 1);
  CHECK(e.fp == 1);
  CHECK(e.fn == 0);
  CHECK(e.matches[0].first == 1);
}

TEST_CASE("no detections") {
  const std::vector<Box> gts{Box(20, 20, 10, 10), Box(60, 60, 10, 10)};
  const auto e = metrics::match_detections(std::vector<Detection>{}, gts);
  CHECK(e.tp == 0);
  CHECK(e.fp == 0);
  CHECK(e.fn == 2);
}

TEST_CASE("micro averaging across frames") {
  std::vector<metrics::FrameResult> frames;
  frames.push_back({"a", true, {2, 1, 0, {}}});
  frames.push_back({"a", false, {0, 2, 1, {}}});
  frames.push_back({"a", false, {1, 0, 1, {}}});
  const auto r = metrics::aggregate(frames);
  CHECK(*r.recall == doctest::Approx(3.0 / 5.0));
  CHECK(*r.precision == doctest::Approx(3.0 / 6.0));
  CHECK(*r.at_least_one == 1.0);
}

TEST_CASE("random frames: counts, monotone max_dets, bounded by best assignment") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> pos(10, 60), side(6, 20), score(0, 1);
  std::uniform_int_distribution<int> count(0, 6);
  for (int it = 0; it < 300; ++it) {
    std::vector<Box> gts;
    std::vector<Detection> dets;
    for (int i = count(rng) / 2; i > 0; --i) gts.emplace_back(pos(rng), pos(rng), side(rng), side(rng));
    for (int i = count(rng); i > 0; --i) dets.push_back({Box(pos(rng), pos(rng), side(rng), side(rng)), score(rng)});
    metrics::EvalParams p1, p5;
    p1.max_dets = 1;
    const auto e1 = metrics::match_detections(dets, gts, p1);
    const auto e5 = metrics::match_detections(dets, gts, p5);
    CHECK(e1.tp <= e5.tp);
    CHECK(e5.tp + e5.fn == gts.size());
    std::size_t eligible = 0;
    for (const auto& d : dets) eligible += d.score >= p5.score_thr ? 1 : 0;
    CHECK(e5.tp + e5.fp == std::min<std::size_t>(eligible, 5));
    CHECK(e1.tp + e1.fp == std::min<std::size_t>(eligible, 1));
    // exhaustive maximum matching over eligible detections
    std::vector<std::size_t> el;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].score >= p5.score_thr) el.push_back(i);
    }
    std::size_t best = 0;
    std::vector<int> used(gts.size(), 0);
    std::function<void(std::size_t, std::size_t)> go = [&](std::size_t k, std::size_t got) {
      best = std::max(best, got);
      if (k == el.size()) return;
      go(k + 1, got);
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (!used[g] && geom::iou(dets[el[k]].box, gts[g]) > p5.iou_thr) {
          used[g] = 1;
          go(k + 1, got + 1);
          used[g] = 0;
        }
      }
    };
    go(0, 0);
    CHECK(e5.tp <= best);
    if (best > 0) CHECK(e5.tp > 0);
  }
}

TEST_CASE("small metric examples") {
  const std::vector<Box> gt{Box(30, 30, 12, 12)};
  const auto e = metrics::match_detections(std::vector<Detection>{{gt[0], 0.9}}, gt);
  CHECK(e.tp == 1);
  CHECK(e.fp == 0);
  CHECK(e.fn == 0);

  std::vector<metrics::FrameResult> perfect{{"a", true, {1, 0, 0, {}}}, {"a", false, {2, 0, 0, {}}}};
  auto r = metrics::aggregate(perfect);
  CHECK(*r.recall == 1.0);
  CHECK(*r.precision == 1.0);
  CHECK(*r.at_least_one == 1.0);

  std::vector<metrics::FrameResult> two{{"a", true, {1, 0, 0, {}}}, {"b", true, {0, 1, 1, {}}}};
  r = metrics::aggregate(two);
  CHECK(*r.at_least_one == 0.5);

  const std::vector<std::vector<double>> uniform{{0.5, 0.5}, {0.5, 0.5}};
  CHECK(metrics::classification_metrics(uniform, std::vector<int>{0, 1}).cross_entropy ==
        doctest::Approx(std::log(2.0)));
  const std::vector<std::vector<double>> pr{{0.9, 0.1}, {0.4, 0.6}};
  const auto c = metrics::classification_metrics(pr, std::vector<int>{0, 0});
  CHECK(c.accuracy == 0.5);
  CHECK(c.cross_entropy == doctest::Approx(-(std::log(0.9) + std::log(0.4)) / 2).epsilon(1e-12));
  CHECK(c.cross_entropy == doctest::Approx(0.5108).epsilon(1e-4));
}
