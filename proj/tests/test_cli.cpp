// SPDX-License-Identifier: Apache-2.0
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "stenosis/data.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace stenosis;
using nlohmann::json;

namespace {
int run(const std::string& args) {
  const std::string cmd = std::string(STENOSIS_CLI) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// every file except the config snapshot, which records the output path
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "run_config.toml") continue;
    out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

void write_truth(const fs::path& dataset, const fs::path& out) {
  std::vector<data::DetectionRecord> recs;
  for (const auto& s : data::load_dataset(dataset)) {
    for (const auto& f : s.manifest.frames) {
      data::DetectionRecord r;
      r.sequence = s.manifest.sequence_id;
      r.frame = f.index;
      for (const auto& b : f.boxes) r.detections.push_back({b, 1.0});
      recs.push_back(std::move(r));
    }
  }
  data::write_detections(out, recs);
}
}  // namespace

TEST_CASE("synth is reproducible") {
  fixtures::TempDir tmp("cli_synth");
  const std::string common = " --sequences 3 --size 48 --vessel-width 3 --seed 7";
  REQUIRE(run("synth --out " + q(tmp.path / "a") + common) == 0);
  REQUIRE(run("synth --out " + q(tmp.path / "b") + common) == 0);
  REQUIRE(run("synth --out " + q(tmp.path / "c") + " --sequences 3 --size 48 --vessel-width 3 --seed 8") == 0);
  const auto a = tree(tmp.path / "a");
  CHECK(a.size() > 3);
  CHECK(a == tree(tmp.path / "b"));
  CHECK(a != tree(tmp.path / "c"));
  CHECK(fs::exists(tmp.path / "a" / "run_config.toml"));
}

TEST_CASE("eval-det on ground truth") {
  fixtures::TempDir tmp("cli_eval");
  const auto ds = tmp.path / "ds";
  REQUIRE(run("synth --out " + q(ds) + " --sequences 4 --size 48 --vessel-width 3 --lesion-fraction 1 --seed 2") == 0);
  write_truth(ds, tmp.path / "truth.jsonl");
  REQUIRE(run("eval-det --dataset " + q(ds) + " --detections " + q(tmp.path / "truth.jsonl") + " --out " +
              q(tmp.path / "report.json")) == 0);
  const auto r = json::parse(slurp(tmp.path / "report.json"));
  CHECK(r["max-5"]["recall"].get<double>() == 1.0);
  CHECK(r["max-5"]["precision"].get<double>() == 1.0);
  CHECK(r["max-5"]["at_least_one"].get<double>() == 1.0);
  CHECK(r["max-1"]["precision"].get<double>() == 1.0);
  CHECK(r["max-1"]["recall"].get<double>() <= r["max-5"]["recall"].get<double>());
  CHECK(fs::exists(tmp.path / "report.json.config.toml"));

  REQUIRE(run("split --dataset " + q(ds) + " --out " + q(tmp.path / "split.json") + " --folds 2 --group sequence") == 0);
  REQUIRE(run("eval-det --dataset " + q(ds) + " --detections " + q(tmp.path / "truth.jsonl") + " --split " +
              q(tmp.path / "split.json") + " --out " + q(tmp.path / "folds.json")) == 0);
  const auto f = json::parse(slurp(tmp.path / "folds.json"));
  CHECK(f["max-5"]["recall"]["mean"].get<double>() == 1.0);
  CHECK(f["max-5"]["recall"]["std"].get<double>() == 0.0);
}

TEST_CASE("propagate and stats run") {
  fixtures::TempDir tmp("cli_prop");
  const auto ds = tmp.path / "ds";
  REQUIRE(run("synth --out " + q(ds) + " --sequences 2 --size 64 --vessel-width 4 --seed 5") == 0);
  CHECK(run("stats --dataset " + q(ds)) == 0);
  REQUIRE(run("propagate --dataset " + q(ds) + " --out " + q(tmp.path / "prop.jsonl")) == 0);
  const auto recs = data::read_detections(tmp.path / "prop.jsonl");
  std::size_t frames = 0;
  for (const auto& s : data::load_dataset(ds)) frames += s.manifest.frames.size();
  CHECK(recs.size() == frames);
}

TEST_CASE("exit codes") {
  fixtures::TempDir tmp("cli_exit");
  CHECK(run("") == 1);
  CHECK(run("no-such-command") == 1);
  CHECK(run("synth") == 1);
  CHECK(run("synth --out " + q(tmp.path / "x") + " --sequences 0") == 1);
  CHECK(run("eval-det --dataset " + q(tmp.path) + " --detections x --frames some") == 1);
  CHECK(run("stats --dataset " + q(tmp.path / "missing")) == 2);
  CHECK(run("--help") == 0);
}
