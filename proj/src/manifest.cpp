// SPDX-License-Identifier: Apache-2.0
// JSON persistence for manifests, split plans and detection files.
#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "stenosis/data.hpp"
#include "stenosis/errors.hpp"

namespace stenosis::data {

using nlohmann::json;

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json box_json(const geom::Box& b) { return json::array({b.cx(), b.cy(), b.w(), b.h()}); }

geom::Box box_from(const json& j) {
  if (!j.is_array() || j.size() < 4) throw ValidationError("box must be [cx, cy, w, h]");
  return geom::Box(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

template <typename F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ValidationError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string manifest_to_json(const SequenceManifest& m) {
  json frames = json::array();
  for (const auto& f : m.frames) {
    json boxes = json::array();
    for (const auto& b : f.boxes) boxes.push_back(box_json(b));
    frames.push_back({{"index", f.index},
                      {"file", f.file},
                      {"interval", to_string(f.interval)},
                      {"is_reference", f.is_reference},
                      {"boxes", boxes}});
  }
  json prov = {{"kind", m.provenance.kind}};
  if (m.provenance.seed) prov["seed"] = *m.provenance.seed;
  json j = {{"schema", kManifestSchema},
            {"sequence_id", m.sequence_id},
            {"patient_id", m.patient_id},
            {"view", to_string(m.view)},
            {"width", m.width},
            {"height", m.height},
            {"provenance", prov},
            {"frames", frames}};
  return j.dump(2);
}

SequenceManifest manifest_from_json(const std::string& text) {
  return guarded("manifest", [&] {
    const json j = json::parse(text);
    if (j.at("schema").get<int>() != kManifestSchema) {
      throw ValidationError("manifest: unsupported schema " + j.at("schema").dump());
    }
    SequenceManifest m;
    m.sequence_id = j.at("sequence_id").get<std::string>();
    m.patient_id = j.at("patient_id").get<std::string>();
    m.view = view_from_string(j.at("view").get<std::string>());
    m.width = j.at("width").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      m.provenance.kind = p.value("kind", "imported");
      if (p.contains("seed")) m.provenance.seed = p["seed"].get<std::uint64_t>();
    }
    for (const auto& fj : j.at("frames")) {
      FrameRecord f;
      f.index = fj.at("index").get<std::size_t>();
      f.file = fj.value("file", "");
      f.interval = interval_from_string(fj.at("interval").get<std::string>());
      f.is_reference = fj.value("is_reference", false);
      for (const auto& bj : fj.value("boxes", json::array())) f.boxes.push_back(box_from(bj));
      m.frames.push_back(std::move(f));
    }
    m.validate();
    return m;
  });
}

void save_manifest(const std::filesystem::path& path, const SequenceManifest& m) {
  write_text(path, manifest_to_json(m) + "\n");
}

SequenceManifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_json(read_text(path));
}

ImageU8 SequenceOnDisk::load_frame(std::size_t index) const {
  if (index >= manifest.frames.size()) {
    throw NotFoundError("sequence " + manifest.sequence_id + ": no frame " + std::to_string(index));
  }
  ImageU8 img = read_png(dir / manifest.frames[index].file);
  if (img.width != manifest.width || img.height != manifest.height) {
    throw ValidationError("sequence " + manifest.sequence_id + ": frame " + std::to_string(index) +
                          " has the wrong size");
  }
  return img;
}

std::vector<SequenceOnDisk> load_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw NotFoundError("dataset directory " + root.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "manifest.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<SequenceOnDisk> out;
  for (const auto& d : dirs) out.push_back({d, load_manifest(d / "manifest.json")});
  return out;
}

void save_sequence(const std::filesystem::path& dir, const SequenceManifest& m,
                   std::span<const ImageU8> frames) {
  m.validate();
  if (frames.size() != m.frames.size()) throw ValidationError("save_sequence: frame count mismatch");
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) write_png(dir / m.frames[i].file, frames[i]);
  save_manifest(dir / "manifest.json", m);
}

void write_detections(const std::filesystem::path& path, std::span<const DetectionRecord> recs) {
  std::ostringstream os;
  for (const auto& r : recs) {
    json boxes = json::array();
    for (const auto& d : r.detections) {
      boxes.push_back({d.box.cx(), d.box.cy(), d.box.w(), d.box.h(), d.score});
    }
    json j = {{"sequence", r.sequence}, {"frame", r.frame}, {"boxes", boxes}};
    if (!r.flags.empty()) j["flags"] = r.flags;
    os << j.dump() << '\n';
  }
  write_text(path, os.str());
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<DetectionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    out.push_back(guarded(where.c_str(), [&] {
      const json j = json::parse(line);
      DetectionRecord r;
      r.sequence = j.at("sequence").get<std::string>();
      r.frame = j.at("frame").get<std::size_t>();
      for (const auto& b : j.at("boxes")) {
        if (!b.is_array() || b.size() != 5) throw ValidationError(where + ": box must be [cx,cy,w,h,score]");
        const double score = b[4].get<double>();
        if (!(score >= 0.0 && score <= 1.0)) throw ValidationError(where + ": score outside [0,1]");
        r.detections.push_back({box_from(b), score});
      }
      if (j.contains("flags")) r.flags = j["flags"].get<std::vector<bool>>();
      return r;
    }));
  }
  return out;
}

std::string split_to_json(const SplitPlan& plan) {
  json j = {{"grouping_key", plan.grouping_key},
            {"stratification_key", plan.stratification_key},
            {"seed", plan.seed},
            {"folds", plan.folds}};
  return j.dump(2);
}

SplitPlan split_from_json(const std::string& text) {
  return guarded("split", [&] {
    const json j = json::parse(text);
    SplitPlan p;
    p.grouping_key = j.at("grouping_key").get<std::string>();
    p.stratification_key = j.value("stratification_key", "view");
    p.seed = j.value("seed", std::uint64_t{0});
    p.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
    return p;
  });
}

}  // namespace stenosis::data
