// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "stenosis/errors.hpp"
#include "stenosis/inference.hpp"
#include "support.hpp"

using namespace stenosis;
using geom::Box;
using infer::Detection;

namespace {
bool same(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i].box == b[i].box) || a[i].score != b[i].score) return false;
  }
  return true;
}
}  // namespace

TEST_CASE("nms basics") {
  const std::vector<Detection> dets{{Box(10, 10, 10, 10), 0.9},
                                    {Box(11, 10, 10, 10), 0.8},
                                    {Box(50, 50, 10, 10), 0.7},
                                    {Box(80, 80, 10, 10), 0.4}};
  const auto out = infer::nms(dets);
  REQUIRE(out.size() == 2);
  CHECK(out[0].score == 0.9);
  CHECK(out[1].score == 0.7);
  CHECK(infer::nms(std::vector<Detection>{}).empty());
  CHECK(infer::nms(dets, {0.0, 0.5, 1}).size() == 1);
  CHECK(infer::nms(dets, {0.0, 0.5, 10}).size() == 3);
  CHECK(infer::nms(dets, {0.95, 0.5, 10}).empty());
}

TEST_CASE("nms keeps input order among equal scores") {
  const std::vector<Detection> dets{{Box(10, 10, 10, 10), 0.6}, {Box(12, 10, 10, 10), 0.6}, {Box(90, 10, 10, 10), 0.6}};
  const auto out = infer::nms(dets, {0.5, 0.3, 5});
  REQUIRE(out.size() == 2);
  CHECK(out[0].box == dets[0].box);
  CHECK(out[1].box == dets[2].box);
}

TEST_CASE("nms equals the quadratic reference") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> count(0, 200);
  for (int i = 0; i < 200; ++i) {
    const auto dets = oracle::random_detections(rng, count(rng));
    for (std::size_t max_out : {std::size_t{5}, std::size_t{1000}}) {
      const infer::NmsParams p{0.5, 0.5, max_out};
      const auto got = infer::nms(dets, p);
      REQUIRE(same(got, oracle::brute_nms(dets, 0.5, 0.5, max_out)));
      REQUIRE(same(infer::nms(got, p), got));
      for (std::size_t a = 0; a < got.size(); ++a) {
        for (std::size_t b = a + 1; b < got.size(); ++b) REQUIRE(geom::iou(got[a].box, got[b].box) <= 0.5);
      }
    }
  }
}

TEST_CASE("infer decodes, clips and suppresses") {
  geom::AnchorConfig cfg{{1.0}, {1.0}, {{32, 32}}};
  const auto grid = geom::generate_anchors(cfg, 64, 64);
  REQUIRE(grid.size() == 4);
  std::vector<double> probs{0.9, 0.2, 0.1, 0.7};
  std::vector<geom::RegressionTarget> regs{{0.1, 0, 0, 0}, {}, {}, {0, 0, std::log(2.0), 0}};
  const auto out = infer::infer(probs, regs, grid, 64, 64);
  REQUIRE(out.size() == 2);
  CHECK(out[0].box.cx() == doctest::Approx(16 + 3.2));
  CHECK(out[0].score == 0.9);
  // second one grows to 64 wide around x=48 and is clipped to [16,64]
  const auto c = out[1].box.corners();
  CHECK(c.x1 == doctest::Approx(16));
  CHECK(c.x2 == doctest::Approx(64));
  CHECK_THROWS_AS(infer::infer(std::vector<double>(3), regs, grid, 64, 64), ValidationError);
}

TEST_CASE("infer skips non-finite regressions") {
  geom::AnchorConfig cfg{{1.0}, {1.0}, {{64, 32}}};
  const auto grid = geom::generate_anchors(cfg, 64, 64);
  std::vector<double> probs{0.9};
  std::vector<geom::RegressionTarget> regs{{NAN, 0, 0, 0}};
  CHECK(infer::infer(probs, regs, grid, 64, 64).empty());
  regs[0] = {0, 0, 800.0, 0};
  CHECK(infer::infer(probs, regs, grid, 64, 64).empty());
}
