// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "stenosis/data.hpp"
#include "stenosis/errors.hpp"
#include "stenosis/image.hpp"
#include "support.hpp"

using namespace stenosis;
using namespace stenosis::data;

TEST_CASE("png round trip") {
  fixtures::TempDir tmp("png");
  ImageU8 img(13, 7);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 37);
  write_png(tmp.path / "a.png", img);
  CHECK(read_png(tmp.path / "a.png") == img);
  CHECK(!encode_png(img).empty());
  CHECK_THROWS(read_png(tmp.path / "missing.png"));
  std::ofstream(tmp.path / "junk.png") << "not a png";
  CHECK_THROWS(read_png(tmp.path / "junk.png"));
}

TEST_CASE("to_u8 rounds and clamps") {
  ImageF f(3, 1);
  f.pixels = {-4.0, 100.5, 300.0};
  const auto u = to_u8(f);
  CHECK(u.pixels[0] == 0);
  CHECK(u.pixels[1] == 101);
  CHECK(u.pixels[2] == 255);
}

TEST_CASE("synthetic sequence layout") {
  SynthParams p;
  p.seed = 3;
  p.stenosis_count = 2;
  const auto s = synth_sequence(p);
  const auto& m = s.manifest;
  REQUIRE(m.frames.size() == p.phases.total());
  CHECK(s.frames.size() == m.frames.size());
  CHECK_NOTHROW(m.validate());
  CHECK(m.provenance.kind == "synthetic");
  CHECK(m.provenance.seed == 3u);
  std::size_t counts[4] = {};
  for (const auto& f : m.frames) ++counts[static_cast<int>(f.interval)];
  CHECK(counts[0] == p.phases.no_contrast);
  CHECK(counts[1] == p.phases.introducing);
  CHECK(counts[2] == p.phases.optimal);
  CHECK(counts[3] == p.phases.vanishing);
  const auto ref = m.reference_index();
  CHECK(m.frames[ref].interval == Interval::optimal);
  CHECK(ref == p.phases.no_contrast + p.phases.introducing + p.phases.optimal / 2);
  CHECK(m.frames[ref].boxes.size() == 2);
  for (const auto& f : m.frames) {
    if (f.interval == Interval::no_contrast) CHECK(f.boxes.empty());
    for (const auto& b : f.boxes) {
      const auto c = b.corners();
      CHECK(c.x1 >= 0);
      CHECK(c.y1 >= 0);
      CHECK(c.x2 <= 128);
      CHECK(c.y2 <= 128);
    }
  }
  for (const auto& b : s.lesion_boxes_at_rest) CHECK(b.w() == doctest::Approx(4 * p.vessel_width));
}

TEST_CASE("synthesis is deterministic in the seed") {
  SynthParams p;
  p.seed = 11;
  const auto a = synth_sequence(p), b = synth_sequence(p);
  CHECK(a.frames == b.frames);
  CHECK(a.manifest == b.manifest);
  p.seed = 12;
  CHECK(!(synth_sequence(p).frames == a.frames));
}

TEST_CASE("lesion sits on the darkened vessel") {
  SynthParams p;
  p.seed = 5;
  p.noise = 0.0;
  const auto s = synth_sequence(p);
  const auto ref = s.manifest.reference_index();
  const auto& img = s.frames[ref];
  const auto& box = s.manifest.frames[ref].boxes.at(0);
  const auto c = box.corners();
  int inside_min = 255;
  for (auto y = static_cast<std::size_t>(c.y1); y < static_cast<std::size_t>(c.y2); ++y) {
    for (auto x = static_cast<std::size_t>(c.x1); x < static_cast<std::size_t>(c.x2); ++x) {
      inside_min = std::min<int>(inside_min, img.at(x, y));
    }
  }
  CHECK(inside_min < p.background - 30);
  // the first frame carries no contrast at all
  int first_min = 255;
  for (auto v : s.frames.front().pixels) first_min = std::min<int>(first_min, v);
  CHECK(first_min > p.background - 30);
}

TEST_CASE("synthesis rejects bad parameters") {
  SynthParams p;
  p.narrowing = 1.0;
  CHECK_THROWS_AS(synth_sequence(p), ValidationError);
  p = {};
  p.width = 8;
  CHECK_THROWS_AS(synth_sequence(p), ValidationError);
  p = {};
  p.stenosis_count = 2;
  p.stenosis_positions = {0.5};
  CHECK_THROWS_AS(synth_sequence(p), ValidationError);
}

TEST_CASE("motion shifts boxes with the frame") {
  SynthParams p;
  p.seed = 4;
  p.drift_x = 0.5;
  const auto s = synth_sequence(p);
  const auto ref = s.manifest.reference_index();
  const auto& b0 = s.lesion_boxes_at_rest.at(0);
  const auto& b = s.manifest.frames[ref].boxes.at(0);
  if (b.w() == b0.w()) CHECK(b.cx() == doctest::Approx(b0.cx() + s.frame_dx[ref]));
  CHECK(s.frame_dx[ref] == doctest::Approx(0.5 * static_cast<double>(ref)));
}

TEST_CASE("manifest json round trip and validation") {
  SynthParams p;
  p.seed = 9;
  p.view = View::LCA;
  const auto m = synth_sequence(p).manifest;
  CHECK(manifest_from_json(manifest_to_json(m)) == m);
  auto bad = m;
  for (auto& f : bad.frames) f.is_reference = false;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_THROWS_AS(bad.reference_index(), ValidationError);
  bad = m;
  bad.frames[2].index = 7;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_THROWS_AS(manifest_from_json("{\"schema\": 1}"), ValidationError);
  CHECK_THROWS_AS(manifest_from_json("not json"), ValidationError);
  CHECK(view_from_string(to_string(View::RCA)) == View::RCA);
  CHECK(interval_from_string(to_string(Interval::vanishing)) == Interval::vanishing);
  CHECK_THROWS_AS(view_from_string("XYZ"), ValidationError);
}

TEST_CASE("dataset save and load") {
  fixtures::TempDir tmp("dataset");
  SynthParams p;
  p.width = p.height = 32;
  p.vessel_width = 3;
  p.seed = 1;
  p.sequence_id = "s1";
  const auto s = synth_sequence(p);
  save_sequence(tmp.path / "s1", s.manifest, s.frames);
  const auto ds = load_dataset(tmp.path);
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].manifest == s.manifest);
  CHECK(ds[0].load_frame(3) == s.frames[3]);
  CHECK_THROWS(ds[0].load_frame(999));
  CHECK_THROWS(load_dataset(tmp.path / "nope"));
}

TEST_CASE("detections file round trip") {
  fixtures::TempDir tmp("dets");
  std::vector<DetectionRecord> recs(2);
  recs[0].sequence = "a";
  recs[0].frame = 4;
  recs[0].detections = {{geom::Box(10, 12, 5, 6), 0.75}};
  recs[0].flags = {true};
  recs[1].sequence = "b";
  write_detections(tmp.path / "d.jsonl", recs);
  const auto back = read_detections(tmp.path / "d.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].sequence == "a");
  CHECK(back[0].frame == 4);
  REQUIRE(back[0].detections.size() == 1);
  CHECK(back[0].detections[0].box == geom::Box(10, 12, 5, 6));
  CHECK(back[0].detections[0].score == 0.75);
  CHECK(back[1].detections.empty());
}

TEST_CASE("augment formula") {
  ImageF f(2, 1);
  f.pixels = {100.0, 200.0};
  const auto a = augment(f, 10.0, 2.0);
  CHECK(a.pixels[0] == doctest::Approx(2.0 * (100 - 150) + 150 + 10));
  CHECK(a.pixels[1] == 255.0);
  const auto id = augment(f, 0.0, 1.0);
  CHECK(id == f);
  CHECK_THROWS_AS(augment(f, 0.0, 0.0), ValidationError);
  std::mt19937_64 rng(1);
  const auto r = augment_random(f, {}, rng);
  for (double v : r.pixels) {
    CHECK(v >= 0.0);
    CHECK(v <= 255.0);
  }
}

TEST_CASE("downscale averages areas") {
  ImageF f(4, 4);
  for (std::size_t i = 0; i < 16; ++i) f.pixels[i] = static_cast<double>(i);
  const auto d = downscale(f, 2, 2);
  CHECK(d.at(0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(d.at(1, 1) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
  const auto t = downscale(f, 3, 3);
  double sum_in = 0, sum_out = 0;
  for (double v : f.pixels) sum_in += v;
  for (double v : t.pixels) sum_out += v;
  CHECK(sum_out / 9.0 == doctest::Approx(sum_in / 16.0));
  CHECK_THROWS_AS(downscale(f, 5, 4), ValidationError);
}

TEST_CASE("stratified split keeps groups whole") {
  std::vector<SplitItem> items;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 60; ++i) {
    items.push_back({"s" + std::to_string(i), "p" + std::to_string(i / 3), i % 4 == 0 ? "LCA" : "RCA"});
  }
  const auto plan = stratified_kfold(items, 5, 42);
  REQUIRE(plan.folds.size() == 5);
  std::set<std::string> seen;
  std::map<std::string, std::size_t> group_fold;
  for (std::size_t f = 0; f < 5; ++f) {
    CHECK(!plan.folds[f].empty());
    for (const auto& id : plan.folds[f]) {
      CHECK(seen.insert(id).second);
      const auto idx = static_cast<std::size_t>(std::stoi(id.substr(1)));
      const auto [it, fresh] = group_fold.emplace(items[idx].group, f);
      CHECK(it->second == f);
    }
  }
  CHECK(seen.size() == items.size());
  CHECK(plan.fold_of("s7") == group_fold["p2"]);
  CHECK_THROWS_AS(plan.fold_of("zz"), NotFoundError);
  const auto again = split_from_json(split_to_json(plan));
  CHECK(again.folds == plan.folds);
  CHECK(stratified_kfold(items, 5, 42).folds == plan.folds);
  CHECK_THROWS_AS(stratified_kfold(items, 1, 0), ValidationError);
  CHECK_THROWS_AS(stratified_kfold(std::span(items).first(6), 5, 0), ValidationError);
}

TEST_CASE("manifest statistics") {
  std::vector<SequenceManifest> ms;
  for (std::uint64_t i = 0; i < 3; ++i) {
    SynthParams p;
    p.width = p.height = 32;
    p.vessel_width = 3;
    p.seed = i;
    p.view = i == 2 ? View::LCA : View::RCA;
    p.patient_id = i < 2 ? "p0" : "p1";
    p.sequence_id = "s" + std::to_string(i);
    p.stenosis_count = i == 1 ? 0 : 1;
    p.stenosis_positions.clear();
    ms.push_back(synth_sequence(p).manifest);
  }
  const auto st = manifest_stats(ms);
  CHECK(st.total.sequences == 3);
  CHECK(st.total.patients == 2);
  CHECK(st.total.optimal == 30);
  CHECK(st.total.stenoses == 2);
  CHECK(st.per_view.at("RCA").sequences == 1);
  CHECK(st.no_lesion_per_view.at("RCA").sequences == 1);
  CHECK(!format_stats(st).empty());
}

TEST_CASE("no-lesion sequence has no boxes") {
  SynthParams p;
  p.seed = 2;
  p.stenosis_count = 0;
  const auto s = synth_sequence(p);
  for (const auto& f : s.manifest.frames) CHECK(f.boxes.empty());
  CHECK_NOTHROW(s.manifest.validate());
}

TEST_CASE("lesion box sits at the requested arclength") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthParams p;
    p.seed = seed;
    p.narrowing = 0.4;
    p.stenosis_positions = {0.5};
    const auto s = synth_sequence(p);
    // half the polyline length along the generator's centerline
    const auto& c = s.centerline;
    std::vector<double> acc{0.0};
    for (std::size_t i = 1; i < c.size(); ++i) {
      acc.push_back(acc.back() + std::hypot(c[i].first - c[i - 1].first, c[i].second - c[i - 1].second));
    }
    const double half = 0.5 * acc.back();
    std::size_t k = 0;
    while (k + 1 < acc.size() && acc[k + 1] < half) ++k;
    const double t = (half - acc[k]) / std::max(1e-12, acc[k + 1] - acc[k]);
    const double mx = c[k].first + t * (c[k + 1].first - c[k].first);
    const double my = c[k].second + t * (c[k + 1].second - c[k].second);
    const auto& b = s.lesion_boxes_at_rest.at(0);
    CHECK(std::hypot(b.cx() - mx, b.cy() - my) <= 2.0);
  }
}

TEST_CASE("augment examples") {
  ImageF gray(4, 4);
  for (std::size_t i = 0; i < 16; ++i) gray.pixels[i] = 120.0 + static_cast<double>(i % 4);
  const auto up = augment(gray, 10.0, 1.0);
  for (std::size_t i = 0; i < 16; ++i) CHECK(up.pixels[i] == doctest::Approx(gray.pixels[i] + 10.0));
  ImageF flat(3, 3);
  std::fill(flat.pixels.begin(), flat.pixels.end(), 77.0);
  CHECK(augment(flat, 0.0, 2.0) == flat);
  ImageU8 u(2, 1);
  u.pixels = {100, 250};
  const auto au = augment(u, 10.0, 1.0);
  CHECK(au.pixels[0] == 110);
  CHECK(au.pixels[1] == 255);
}

TEST_CASE("downscale examples") {
  ImageF f(2, 2);
  f.pixels = {0, 0, 100, 100};
  CHECK(downscale(f, 1, 1).pixels[0] == doctest::Approx(50.0));
  CHECK(downscale(f, 2, 2) == f);
  ImageF flat(6, 5);
  std::fill(flat.pixels.begin(), flat.pixels.end(), 42.0);
  for (double v : downscale(flat, 4, 3).pixels) CHECK(v == doctest::Approx(42.0));
}

TEST_CASE("split examples") {
  std::vector<SplitItem> items;
  for (int i = 0; i < 10; ++i) items.push_back({"s" + std::to_string(i), "g" + std::to_string(i), i < 5 ? "RCA" : "LCA"});
  const auto plan = stratified_kfold(items, 5, 1);
  for (const auto& fold : plan.folds) {
    REQUIRE(fold.size() == 2);
    const auto idx = [](const std::string& id) { return std::stoi(id.substr(1)); };
    CHECK((idx(fold[0]) < 5) != (idx(fold[1]) < 5));
  }
  // k groups into k folds: one group each
  std::vector<SplitItem> grouped;
  for (int i = 0; i < 9; ++i) grouped.push_back({"s" + std::to_string(i), "p" + std::to_string(i / 3), "RCA"});
  const auto g = stratified_kfold(grouped, 3, 4);
  for (const auto& fold : g.folds) {
    REQUIRE(fold.size() == 3);
    const auto grp = [](const std::string& id) { return std::stoi(id.substr(1)) / 3; };
    CHECK(grp(fold[0]) == grp(fold[1]));
    CHECK(grp(fold[1]) == grp(fold[2]));
  }
}

TEST_CASE("stats examples") {
  const auto none = manifest_stats(std::vector<SequenceManifest>{});
  CHECK(none.total.sequences == 0);
  CHECK(none.total.patients == 0);
  CHECK(none.total.stenoses == 0);

  SynthParams p;
  p.width = p.height = 32;
  p.vessel_width = 3;
  p.phases = {5, 1, 10, 8};
  p.seed = 1;
  const auto one = synth_sequence(p).manifest;
  const auto st = manifest_stats(std::vector<SequenceManifest>{one});
  CHECK(st.total.no_contrast == 5);
  CHECK(st.total.introducing == 1);
  CHECK(st.total.optimal == 10);
  CHECK(st.total.vanishing == 8);

  auto two = one;
  two.sequence_id = "other";
  const auto both = manifest_stats(std::vector<SequenceManifest>{one, two});
  CHECK(both.total.patients == 1);
  CHECK(both.total.sequences == 2);
}
