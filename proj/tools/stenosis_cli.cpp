// SPDX-License-Identifier: Apache-2.0
// stenosis: command-line entry point.
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stenosis/data.hpp"
#include "stenosis/errors.hpp"
#include "stenosis/gradcam.hpp"
#include "stenosis/image.hpp"
#include "stenosis/metrics.hpp"
#include "stenosis/service.hpp"
#include "stenosis/toynet.hpp"
#include "stenosis/tracker.hpp"
#include "stenosis/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stenosis;

namespace {

CLI::App* g_app = nullptr;

// Effective flags of this run, written next to its outputs.
void write_snapshot(const fs::path& output) {
  fs::path target = fs::is_directory(output) ? output / "run_config.toml"
                                             : fs::path(output.string() + ".config.toml");
  std::ofstream out(target);
  if (!out) throw std::runtime_error("cannot write config snapshot " + target.string());
  out << g_app->config_to_str(true, false);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << *v;
  return s.str();
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// Sequences kept by an optional split plan.
struct FoldFilter {
  std::string plan_path;
  int fold = -1;
  bool exclude = false;  // true: every fold except `fold`

  std::optional<data::SplitPlan> plan;

  void load() {
    if (plan_path.empty()) return;
    plan = data::split_from_json(read_text(plan_path));
    if (fold < 0 || static_cast<std::size_t>(fold) >= plan->folds.size()) {
      throw ValidationError("--fold must name a fold of the split plan");
    }
  }
  bool keep(const std::string& id) const {
    if (!plan) return true;
    const bool in = plan->fold_of(id) == static_cast<std::size_t>(fold);
    return exclude ? !in : in;
  }
};

FoldFilter held_out_filter() {
  FoldFilter f;
  f.exclude = true;
  return f;
}

void add_fold_options(CLI::App* cmd, FoldFilter& f, const std::string& role) {
  cmd->add_option("--split", f.plan_path, "split plan JSON written by `split`");
  cmd->add_option("--fold", f.fold, "fold index " + role);
}

// Frame loaded at network resolution; returns x / y scale from network to frame pixels.
struct NetFrame {
  ImageF image;
  double sx = 1.0, sy = 1.0;
};

NetFrame load_net_frame(const data::SequenceOnDisk& seq, std::size_t k, std::size_t size) {
  ImageF f = to_float(seq.load_frame(k));
  NetFrame out;
  if (size == 0 || (f.width == size && f.height == size)) {
    out.image = std::move(f);
    return out;
  }
  out.sx = static_cast<double>(f.width) / static_cast<double>(size);
  out.sy = static_cast<double>(f.height) / static_cast<double>(size);
  out.image = data::downscale(f, size, size);
  return out;
}

std::vector<data::SequenceOnDisk> load_sequences(const fs::path& root, const FoldFilter& filter) {
  std::vector<data::SequenceOnDisk> out;
  for (auto& s : data::load_dataset(root)) {
    if (filter.keep(s.manifest.sequence_id)) out.push_back(std::move(s));
  }
  if (out.empty()) throw ValidationError("no sequences selected under " + root.string());
  return out;
}

// --- synth ------------------------------------------------------------------

struct SynthOpts {
  fs::path out;
  std::size_t sequences = 20;
  std::size_t patients = 0;
  std::size_t size = 128;
  double lca_fraction = 0.5;
  double lesion_fraction = 0.8;
  std::size_t max_lesions = 2;
  double vessel_width = 6.0;
  double narrowing = 0.4;
  double noise = 6.0;
  double motion = 1.5;
  double drift = 0.0;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthOpts& o) {
  if (o.sequences == 0) throw ValidationError("--sequences must be positive");
  const std::size_t patients = o.patients == 0 ? std::max<std::size_t>(1, o.sequences / 2) : o.patients;
  fs::create_directories(o.out);
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < o.sequences; ++i) {
    data::SynthParams p;
    p.width = p.height = o.size;
    p.view = unit(rng) < o.lca_fraction ? data::View::LCA : data::View::RCA;
    const bool lesion = unit(rng) < o.lesion_fraction;
    p.stenosis_count = lesion ? 1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(o.max_lesions)) : 0;
    p.stenosis_count = std::min(p.stenosis_count, o.max_lesions);
    p.vessel_width = o.vessel_width;
    p.narrowing = o.narrowing;
    p.noise = o.noise;
    p.motion_amplitude = o.motion;
    p.drift_x = o.drift * (unit(rng) - 0.5);
    p.drift_y = o.drift * (unit(rng) - 0.5);
    p.seed = rng();
    char id[32], pid[32];
    std::snprintf(id, sizeof id, "seq%04zu", i);
    std::snprintf(pid, sizeof pid, "p%04zu", i % patients);
    p.sequence_id = id;
    p.patient_id = pid;
    const auto s = data::synth_sequence(p);
    data::save_sequence(o.out / id, s.manifest, s.frames);
  }
  write_snapshot(o.out);
  std::cout << "wrote " << o.sequences << " sequences to " << o.out.string() << "\n";
  return 0;
}

// --- propagate ----------------------------------------------------------------

struct PropagateOpts {
  fs::path dataset, out;
  std::string sequence;
  int from = -1;  // -1: reference frame
  track::TrackerParams tracker;
};

int cmd_propagate(const PropagateOpts& o) {
  std::vector<data::DetectionRecord> recs;
  std::size_t flagged = 0, total = 0;
  for (const auto& seq : data::load_dataset(o.dataset)) {
    const auto& m = seq.manifest;
    if (!o.sequence.empty() && m.sequence_id != o.sequence) continue;
    const std::size_t from = o.from < 0 ? m.reference_index() : static_cast<std::size_t>(o.from);
    if (from >= m.frames.size()) throw ValidationError("--from is past the end of " + m.sequence_id);
    std::vector<ImageU8> frames;
    for (std::size_t k = 0; k < m.frames.size(); ++k) frames.push_back(seq.load_frame(k));
    const auto tracked = track::propagate(frames, from, m.frames[from].boxes, o.tracker);
    for (std::size_t k = 0; k < tracked.size(); ++k) {
      data::DetectionRecord r;
      r.sequence = m.sequence_id;
      r.frame = k;
      for (const auto& t : tracked[k]) {
        r.detections.push_back({t.box, 1.0});
        r.flags.push_back(t.flagged);
        flagged += t.flagged ? 1 : 0;
        ++total;
      }
      recs.push_back(std::move(r));
    }
  }
  if (recs.empty()) throw ValidationError("no matching sequence");
  data::write_detections(o.out, recs);
  write_snapshot(o.out);
  std::cout << "propagated " << total << " boxes, " << flagged << " flagged -> " << o.out.string() << "\n";
  return 0;
}

// --- detector -------------------------------------------------------------------

struct TrainDetOpts {
  fs::path dataset, out;
  std::size_t steps = 2000, batch = 32, size = 64;
  double lr = 8e-4, momentum = 0.9, l2 = 4e-4, anchor_multiplier = 2.0;
  bool include_empty = false, no_augment = false;
  std::uint64_t seed = 0;
  FoldFilter folds = held_out_filter();
};

int cmd_train_detector(TrainDetOpts& o) {
  o.folds.load();
  std::vector<nn::DetectionSample> samples;
  for (const auto& seq : load_sequences(o.dataset, o.folds)) {
    for (const auto& fr : seq.manifest.frames) {
      if (fr.boxes.empty() && !o.include_empty) continue;
      auto nf = load_net_frame(seq, fr.index, o.size);
      nn::DetectionSample s{std::move(nf.image), {}};
      for (const auto& b : fr.boxes) s.boxes.emplace_back(b.cx() / nf.sx, b.cy() / nf.sy, b.w() / nf.sx, b.h() / nf.sy);
      samples.push_back(std::move(s));
    }
  }
  if (samples.empty()) throw ValidationError("no annotated frames to train on");
  nn::ToyNetConfig cfg;
  cfg.kind = nn::NetKind::detector;
  nn::ToyNet net(cfg, o.seed);
  auto sch = nn::TrainSchedule::detector_default();
  sch.steps = o.steps;
  sch.batch_size = o.batch;
  sch.learning_rate = o.lr;
  sch.momentum = o.momentum;
  sch.l2_lambda = o.l2;
  sch.seed = o.seed;
  nn::DetectorTrainOptions opts;
  opts.anchors = nn::detector_anchor_config(o.anchor_multiplier);
  opts.augment = !o.no_augment;
  std::ofstream log(o.out.string() + ".log.csv");
  log << "step,cls_loss,reg_loss,l2_penalty,total\n";
  nn::train_detector(net, samples, sch, opts, [&](const nn::StepLog& s) {
    log << s.step << ',' << s.loss.cls_loss << ',' << s.loss.reg_loss << ',' << s.loss.l2_penalty << ','
        << s.loss.total << '\n';
    if (s.step % 100 == 0 || s.step == sch.steps) {
      std::cerr << "step " << s.step << " loss " << s.loss.total << "\n";
    }
  });
  nn::save_checkpoint(o.out, net, sch.to_json(),
                      {{"input_size", o.size}, {"anchor_multiplier", o.anchor_multiplier}, {"samples", samples.size()}});
  write_snapshot(o.out);
  std::cout << "trained on " << samples.size() << " frames -> " << o.out.string() << "\n";
  return 0;
}

struct DetectOpts {
  fs::path dataset, checkpoint, out;
  double score = 0.5, iou = 0.5;
  std::size_t max_out = 5;
  FoldFilter folds;
};

int cmd_detect(DetectOpts& o) {
  o.folds.load();
  const auto ck = nn::load_checkpoint(o.checkpoint);
  if (ck.net.config().kind != nn::NetKind::detector) throw ValidationError("checkpoint is not a detector");
  const auto size = ck.extra.value("input_size", std::size_t{0});
  const auto anchors = nn::detector_anchor_config(ck.extra.value("anchor_multiplier", 2.0));
  std::vector<data::DetectionRecord> recs;
  for (const auto& seq : load_sequences(o.dataset, o.folds)) {
    for (const auto& fr : seq.manifest.frames) {
      const auto nf = load_net_frame(seq, fr.index, size);
      data::DetectionRecord r;
      r.sequence = seq.manifest.sequence_id;
      r.frame = fr.index;
      for (const auto& d : nn::detect(ck.net, nf.image, anchors, {o.score, o.iou, o.max_out})) {
        const geom::Box b(d.box.cx() * nf.sx, d.box.cy() * nf.sy, d.box.w() * nf.sx, d.box.h() * nf.sy);
        r.detections.push_back({b, d.score});
      }
      recs.push_back(std::move(r));
    }
  }
  data::write_detections(o.out, recs);
  write_snapshot(o.out);
  std::cout << "wrote detections for " << recs.size() << " frames -> " << o.out.string() << "\n";
  return 0;
}

struct EvalDetOpts {
  fs::path dataset, detections, out;
  std::string frames = "all";  // all | annotated | reference
  double iou = 0.2, score = 0.5;
  std::string split;
};

metrics::MetricsReport eval_detections(const std::vector<data::SequenceOnDisk>& seqs,
                                       const std::map<std::pair<std::string, std::size_t>, std::vector<infer::Detection>>& dets,
                                       const EvalDetOpts& o, std::size_t max_dets,
                                       const std::function<bool(const std::string&)>& keep) {
  std::vector<metrics::FrameResult> frames;
  for (const auto& seq : seqs) {
    const auto& m = seq.manifest;
    if (!keep(m.sequence_id)) continue;
    for (const auto& fr : m.frames) {
      if (o.frames == "annotated" && fr.boxes.empty()) continue;
      if (o.frames == "reference" && !fr.is_reference) continue;
      auto it = dets.find({m.sequence_id, fr.index});
      const std::vector<infer::Detection> none;
      const auto& d = it == dets.end() ? none : it->second;
      frames.push_back({m.sequence_id, fr.is_reference, metrics::match_detections(d, fr.boxes, {o.iou, o.score, max_dets})});
    }
  }
  return metrics::aggregate(frames);
}

int cmd_eval_det(const EvalDetOpts& o) {
  if (o.frames != "all" && o.frames != "annotated" && o.frames != "reference") {
    throw ValidationError("--frames must be all, annotated or reference");
  }
  const auto seqs = data::load_dataset(o.dataset);
  std::map<std::pair<std::string, std::size_t>, std::vector<infer::Detection>> dets;
  for (auto& r : data::read_detections(o.detections)) dets[{r.sequence, r.frame}] = std::move(r.detections);

  json report = json::object();
  std::ostringstream table;
  table << std::left << std::setw(10) << "" << std::setw(10) << "Recall" << std::setw(11) << "Precision"
        << "At-least-One\n";
  std::optional<data::SplitPlan> plan;
  if (!o.split.empty()) plan = data::split_from_json(read_text(o.split));
  for (std::size_t md : {std::size_t{1}, std::size_t{5}}) {
    const std::string col = "max-" + std::to_string(md);
    if (!plan) {
      const auto r = eval_detections(seqs, dets, o, md, [](const std::string&) { return true; });
      table << std::setw(10) << col << std::setw(10) << fmt(r.recall) << std::setw(11) << fmt(r.precision)
            << fmt(r.at_least_one) << "\n";
      report[col] = {{"recall", opt_json(r.recall)},
                     {"precision", opt_json(r.precision)},
                     {"at_least_one", opt_json(r.at_least_one)},
                     {"frames", r.frames},
                     {"sequences", r.sequences}};
      continue;
    }
    std::vector<metrics::MetricsReport> folds;
    for (std::size_t f = 0; f < plan->folds.size(); ++f) {
      folds.push_back(eval_detections(seqs, dets, o, md, [&](const std::string& id) { return plan->fold_of(id) == f; }));
    }
    const auto s = metrics::summarize_folds(folds);
    const auto ms = [](const std::optional<metrics::MeanStd>& v) {
      if (!v) return std::string("n/a");
      std::ostringstream os;
      os << std::fixed << std::setprecision(3) << v->mean << " ± " << v->std;
      return os.str();
    };
    const auto mj = [](const std::optional<metrics::MeanStd>& v) {
      return v ? json{{"mean", v->mean}, {"std", v->std}, {"folds", v->count}} : json(nullptr);
    };
    table << std::setw(10) << col << std::setw(16) << ms(s.recall) << std::setw(16) << ms(s.precision)
          << ms(s.at_least_one) << "\n";
    report[col] = {{"recall", mj(s.recall)}, {"precision", mj(s.precision)}, {"at_least_one", mj(s.at_least_one)}};
  }
  std::cout << table.str();
  if (!o.out.empty()) {
    write_text(o.out, report.dump(2) + "\n");
    write_snapshot(o.out);
  }
  return 0;
}

// --- classifier -------------------------------------------------------------------

int view_label(data::View v) { return v == data::View::LCA ? 1 : 0; }

std::vector<nn::LabeledImage> classifier_frames(const std::vector<data::SequenceOnDisk>& seqs, std::size_t size,
                                                const std::function<bool(const std::string&)>& keep) {
  std::vector<nn::LabeledImage> out;
  for (const auto& seq : seqs) {
    const auto& m = seq.manifest;
    if (m.view == data::View::other || !keep(m.sequence_id)) continue;
    for (const auto& fr : m.frames) {
      if (fr.interval != data::Interval::optimal) continue;
      out.push_back({load_net_frame(seq, fr.index, size).image, view_label(m.view)});
    }
  }
  return out;
}

struct TrainClsOpts {
  fs::path dataset, out;
  std::size_t epochs = 30, batch = 32, size = 64, freeze_epochs = 15;
  double lr = 1e-5, val_fraction = 0.2;
  std::uint64_t seed = 0;
  FoldFilter folds = held_out_filter();
};

int cmd_train_classifier(TrainClsOpts& o) {
  o.folds.load();
  if (!(o.val_fraction >= 0.0 && o.val_fraction < 1.0)) throw ValidationError("--val-fraction must be in [0, 1)");
  const auto seqs = load_sequences(o.dataset, o.folds);
  std::set<std::string> val_ids;
  if (o.val_fraction > 0.0) {
    std::vector<data::SplitItem> items;
    for (const auto& s : seqs) items.push_back({s.manifest.sequence_id, s.manifest.patient_id, data::to_string(s.manifest.view)});
    const auto k = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(1.0 / o.val_fraction)));
    if (items.size() >= k) {
      const auto plan = data::stratified_kfold(items, k, o.seed);
      val_ids.insert(plan.folds[0].begin(), plan.folds[0].end());
    }
  }
  const auto train = classifier_frames(seqs, o.size, [&](const std::string& id) { return !val_ids.count(id); });
  const auto val = classifier_frames(seqs, o.size, [&](const std::string& id) { return val_ids.count(id) > 0; });
  if (train.empty()) throw ValidationError("no RCA/LCA optimal frames to train on");

  nn::ToyNetConfig cfg;
  cfg.kind = nn::NetKind::classifier;
  cfg.num_classes = 2;
  nn::ToyNet net(cfg, o.seed);
  auto sch = nn::TrainSchedule::classifier_default();
  sch.epochs = o.epochs;
  sch.batch_size = o.batch;
  sch.learning_rate = o.lr;
  sch.seed = o.seed;
  sch.phases = {{1, o.freeze_epochs, {"C5", "FC"}}, {o.freeze_epochs + 1, std::max(o.epochs, o.freeze_epochs + 1), {}}};
  const auto log = nn::train_classifier(net, train, val, sch);
  std::ofstream csv(o.out.string() + ".log.csv");
  csv << "epoch,phase,train_loss,train_accuracy,val_loss,learning_rate,lr_reduced\n";
  for (const auto& e : log) {
    csv << e.epoch << ',' << e.phase + 1 << ',' << e.train_loss << ',' << e.train_accuracy << ','
        << (e.val_loss ? std::to_string(*e.val_loss) : "") << ',' << e.learning_rate << ',' << e.lr_reduced << '\n';
    std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " acc " << e.train_accuracy << "\n";
  }
  nn::save_checkpoint(o.out, net, sch.to_json(),
                      {{"input_size", o.size}, {"classes", {"RCA", "LCA"}}, {"validation_sequences", val_ids}});
  write_snapshot(o.out);
  std::cout << "trained on " << train.size() << " frames (" << val.size() << " validation) -> " << o.out.string()
            << "\n";
  return 0;
}

struct EvalClsOpts {
  fs::path dataset, checkpoint, out;
  FoldFilter folds;
};

int cmd_eval_cls(EvalClsOpts& o) {
  o.folds.load();
  const auto ck = nn::load_checkpoint(o.checkpoint);
  if (ck.net.config().kind != nn::NetKind::classifier) throw ValidationError("checkpoint is not a classifier");
  const auto frames = classifier_frames(load_sequences(o.dataset, o.folds), ck.extra.value("input_size", std::size_t{0}),
                                        [](const std::string&) { return true; });
  if (frames.empty()) throw ValidationError("no RCA/LCA optimal frames to evaluate");
  std::vector<ImageF> images;
  std::vector<int> labels;
  for (const auto& f : frames) {
    images.push_back(f.image);
    labels.push_back(f.label);
  }
  const auto probs = nn::predict_classes(ck.net, images);
  const auto r = metrics::classification_metrics(probs, labels);
  std::cout << std::fixed << std::setprecision(4) << "accuracy      " << r.accuracy << "\nmacro F1      "
            << r.macro_f1 << "\ncross-entropy " << r.cross_entropy << "\nframes        " << frames.size() << "\n";
  if (!o.out.empty()) {
    write_text(o.out, json{{"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"cross_entropy", r.cross_entropy},
                           {"frames", frames.size()}}.dump(2) + "\n");
    write_snapshot(o.out);
  }
  return 0;
}

struct GradcamOpts {
  fs::path checkpoint, dataset, image, out;
  std::string sequence;
  int frame = -1;
  int class_id = -1;  // -1: predicted class
  double alpha = 0.45;
};

int cmd_gradcam(const GradcamOpts& o) {
  auto ck = nn::load_checkpoint(o.checkpoint);
  const auto size = ck.extra.value("input_size", std::size_t{0});
  ImageU8 original;
  if (!o.image.empty()) {
    original = read_png(o.image);
  } else {
    if (o.dataset.empty() || o.sequence.empty()) throw ValidationError("give --image or --dataset with --sequence");
    for (const auto& seq : data::load_dataset(o.dataset)) {
      if (seq.manifest.sequence_id != o.sequence) continue;
      const auto k = o.frame < 0 ? seq.manifest.reference_index() : static_cast<std::size_t>(o.frame);
      if (k >= seq.manifest.frames.size()) throw NotFoundError("frame out of range");
      original = seq.load_frame(k);
    }
    if (original.empty()) throw NotFoundError("unknown sequence " + o.sequence);
  }
  ImageF input = to_float(original);
  if (size != 0 && (input.width != size || input.height != size)) input = data::downscale(input, size, size);
  int cls = o.class_id;
  if (cls < 0) {
    const auto p = nn::predict_classes(ck.net, std::span<const ImageF>(&input, 1)).front();
    cls = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }
  auto cam = nn::grad_cam(ck.net, input, cls);
  if (cam.heat.width != original.width || cam.heat.height != original.height) {
    // back to frame resolution, nearest sample
    ImageF up(original.width, original.height);
    for (std::size_t y = 0; y < up.height; ++y) {
      for (std::size_t x = 0; x < up.width; ++x) {
        up.at(x, y) = cam.heat.at(x * cam.heat.width / up.width, y * cam.heat.height / up.height);
      }
    }
    cam.heat = std::move(up);
  }
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  write_png(o.out, nn::overlay_cam(original, cam, o.alpha));
  write_snapshot(o.out);
  std::cout << "class " << cls << " -> " << o.out.string() << "\n";
  return 0;
}

// --- service / split / stats -----------------------------------------------------

service::HttpServer* g_server = nullptr;

extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

struct ServeOpts {
  fs::path dataset, detections;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_frames = 256;
};

int cmd_serve(const ServeOpts& o) {
  service::ServiceConfig cfg;
  cfg.data_root = o.dataset;
  if (!o.detections.empty()) cfg.detections = o.detections;
  cfg.max_propagation_frames = o.max_frames;
  service::Store store(cfg);
  service::HttpServer server(store);
  const int port = server.bind(o.host, o.port);
  std::cout << "serving " << store.list().size() << " sequences on http://" << o.host << ":" << port << "\n"
            << std::flush;
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.serve();
  g_server = nullptr;
  return 0;
}

struct SplitOpts {
  fs::path dataset, out;
  std::size_t folds = 5;
  std::string group = "patient";
  std::uint64_t seed = 0;
};

int cmd_split(const SplitOpts& o) {
  if (o.group != "patient" && o.group != "sequence") throw ValidationError("--group must be patient or sequence");
  std::vector<data::SplitItem> items;
  for (const auto& s : data::load_dataset(o.dataset)) {
    const auto& m = s.manifest;
    items.push_back({m.sequence_id, o.group == "patient" ? m.patient_id : m.sequence_id, data::to_string(m.view)});
  }
  const auto plan = data::stratified_kfold(items, o.folds, o.seed, o.group);
  write_text(o.out, data::split_to_json(plan));
  write_snapshot(o.out);
  for (std::size_t f = 0; f < plan.folds.size(); ++f) std::cout << "fold " << f << ": " << plan.folds[f].size() << " sequences\n";
  return 0;
}

int cmd_stats(const fs::path& dataset) {
  std::vector<data::SequenceManifest> ms;
  for (auto& s : data::load_dataset(dataset)) ms.push_back(std::move(s.manifest));
  std::cout << data::format_stats(data::manifest_stats(ms));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stenosis detection toolkit: synthetic data, tracking, toy detector/classifier, evaluation, annotation service"};
  g_app = &app;
  app.set_config("--config", "", "TOML file with option overrides");
  app.require_subcommand(1);

  SynthOpts synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic angiography-like dataset");
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--sequences", synth.sequences, "number of sequences");
  c_synth->add_option("--patients", synth.patients, "number of patients (default: sequences / 2)");
  c_synth->add_option("--size", synth.size, "frame side in pixels");
  c_synth->add_option("--lca-fraction", synth.lca_fraction, "fraction of LCA views");
  c_synth->add_option("--lesion-fraction", synth.lesion_fraction, "fraction of sequences with lesions");
  c_synth->add_option("--max-lesions", synth.max_lesions, "lesions per lesion sequence, upper bound");
  c_synth->add_option("--vessel-width", synth.vessel_width, "nominal vessel width, pixels");
  c_synth->add_option("--narrowing", synth.narrowing, "remaining width fraction at a lesion");
  c_synth->add_option("--noise", synth.noise, "gaussian noise sigma");
  c_synth->add_option("--motion", synth.motion, "periodic motion amplitude, pixels");
  c_synth->add_option("--drift", synth.drift, "max drift, pixels per frame");
  c_synth->add_option("--seed", synth.seed, "random seed");

  PropagateOpts prop;
  auto* c_prop = app.add_subcommand("propagate", "track reference boxes through each sequence");
  c_prop->add_option("--dataset", prop.dataset, "dataset directory")->required();
  c_prop->add_option("--out", prop.out, "output detections JSONL")->required();
  c_prop->add_option("--sequence", prop.sequence, "only this sequence");
  c_prop->add_option("--from", prop.from, "start frame (default: reference frame)");
  c_prop->add_option("--padding", prop.tracker.padding, "search window / box side");
  c_prop->add_option("--learn-rate", prop.tracker.learn_rate, "filter update rate");
  c_prop->add_option("--psr-threshold", prop.tracker.psr_threshold, "flag frames below this PSR");

  TrainDetOpts tdet;
  auto* c_tdet = app.add_subcommand("train-detector", "train the toy pyramid detector");
  c_tdet->add_option("--dataset", tdet.dataset, "dataset directory")->required();
  c_tdet->add_option("--out", tdet.out, "checkpoint path")->required();
  c_tdet->add_option("--steps", tdet.steps, "optimizer steps");
  c_tdet->add_option("--batch", tdet.batch, "batch size");
  c_tdet->add_option("--lr", tdet.lr, "learning rate");
  c_tdet->add_option("--momentum", tdet.momentum, "momentum");
  c_tdet->add_option("--l2", tdet.l2, "L2 penalty lambda");
  c_tdet->add_option("--size", tdet.size, "network input side; frames are downscaled");
  c_tdet->add_option("--anchor-multiplier", tdet.anchor_multiplier, "anchor base size / stride");
  c_tdet->add_flag("--include-empty", tdet.include_empty, "also train on frames without boxes");
  c_tdet->add_flag("--no-augment", tdet.no_augment, "disable brightness/contrast augmentation");
  c_tdet->add_option("--seed", tdet.seed, "random seed");
  add_fold_options(c_tdet, tdet.folds, "held out from training");

  DetectOpts det;
  auto* c_det = app.add_subcommand("detect", "run a detector checkpoint over a dataset");
  c_det->add_option("--dataset", det.dataset, "dataset directory")->required();
  c_det->add_option("--checkpoint", det.checkpoint, "detector checkpoint")->required();
  c_det->add_option("--out", det.out, "output detections JSONL")->required();
  c_det->add_option("--score", det.score, "score threshold");
  c_det->add_option("--iou", det.iou, "NMS IoU threshold");
  c_det->add_option("--max", det.max_out, "detections kept per frame");
  add_fold_options(c_det, det.folds, "to run on");

  EvalDetOpts edet;
  auto* c_edet = app.add_subcommand("eval-det", "recall / precision / at-least-one at max-1 and max-5");
  c_edet->add_option("--dataset", edet.dataset, "dataset directory (ground truth)")->required();
  c_edet->add_option("--detections", edet.detections, "detections JSONL")->required();
  c_edet->add_option("--frames", edet.frames, "all | annotated | reference");
  c_edet->add_option("--iou", edet.iou, "match when IoU exceeds this");
  c_edet->add_option("--score", edet.score, "minimum detection score");
  c_edet->add_option("--split", edet.split, "split plan: report mean ± std over folds");
  c_edet->add_option("--out", edet.out, "report JSON");

  TrainClsOpts tcls;
  auto* c_tcls = app.add_subcommand("train-classifier", "train the toy view classifier");
  c_tcls->add_option("--dataset", tcls.dataset, "dataset directory")->required();
  c_tcls->add_option("--out", tcls.out, "checkpoint path")->required();
  c_tcls->add_option("--epochs", tcls.epochs, "epochs");
  c_tcls->add_option("--freeze-epochs", tcls.freeze_epochs, "epochs training only C5 and FC");
  c_tcls->add_option("--batch", tcls.batch, "batch size");
  c_tcls->add_option("--lr", tcls.lr, "learning rate");
  c_tcls->add_option("--size", tcls.size, "network input side");
  c_tcls->add_option("--val-fraction", tcls.val_fraction, "share of patients held out for validation");
  c_tcls->add_option("--seed", tcls.seed, "random seed");
  add_fold_options(c_tcls, tcls.folds, "held out from training");

  EvalClsOpts ecls;
  auto* c_ecls = app.add_subcommand("eval-cls", "accuracy / macro F1 / cross-entropy of a classifier");
  c_ecls->add_option("--dataset", ecls.dataset, "dataset directory")->required();
  c_ecls->add_option("--checkpoint", ecls.checkpoint, "classifier checkpoint")->required();
  c_ecls->add_option("--out", ecls.out, "report JSON");
  add_fold_options(c_ecls, ecls.folds, "to evaluate");

  GradcamOpts gc;
  auto* c_gc = app.add_subcommand("gradcam", "write a Grad-CAM overlay PNG");
  c_gc->add_option("--checkpoint", gc.checkpoint, "classifier checkpoint")->required();
  c_gc->add_option("--out", gc.out, "output PNG")->required();
  c_gc->add_option("--image", gc.image, "input PNG");
  c_gc->add_option("--dataset", gc.dataset, "dataset directory");
  c_gc->add_option("--sequence", gc.sequence, "sequence id");
  c_gc->add_option("--frame", gc.frame, "frame index (default: reference frame)");
  c_gc->add_option("--class", gc.class_id, "class id (default: predicted)");
  c_gc->add_option("--alpha", gc.alpha, "overlay opacity");

  ServeOpts serve;
  auto* c_serve = app.add_subcommand("serve", "start the annotation service");
  c_serve->add_option("--dataset", serve.dataset, "dataset directory")->required();
  c_serve->add_option("--detections", serve.detections, "detections JSONL to expose");
  c_serve->add_option("--host", serve.host, "bind address");
  c_serve->add_option("--port", serve.port, "port, 0 for any");
  c_serve->add_option("--max-frames", serve.max_frames, "propagation cap per sequence");

  SplitOpts split;
  auto* c_split = app.add_subcommand("split", "group-aware stratified k-fold plan");
  c_split->add_option("--dataset", split.dataset, "dataset directory")->required();
  c_split->add_option("--out", split.out, "plan JSON")->required();
  c_split->add_option("--folds", split.folds, "number of folds");
  c_split->add_option("--group", split.group, "patient | sequence");
  c_split->add_option("--seed", split.seed, "random seed");

  fs::path stats_dataset;
  auto* c_stats = app.add_subcommand("stats", "per-view dataset statistics");
  c_stats->add_option("--dataset", stats_dataset, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth);
    if (c_prop->parsed()) return cmd_propagate(prop);
    if (c_tdet->parsed()) return cmd_train_detector(tdet);
    if (c_det->parsed()) return cmd_detect(det);
    if (c_edet->parsed()) return cmd_eval_det(edet);
    if (c_tcls->parsed()) return cmd_train_classifier(tcls);
    if (c_ecls->parsed()) return cmd_eval_cls(ecls);
    if (c_gc->parsed()) return cmd_gradcam(gc);
    if (c_serve->parsed()) return cmd_serve(serve);
    if (c_split->parsed()) return cmd_split(split);
    if (c_stats->parsed()) return cmd_stats(stats_dataset);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
