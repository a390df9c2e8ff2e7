// SPDX-License-Identifier: Apache-2.0
#include "stenosis/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stenosis/errors.hpp"
#include "stenosis/optim.hpp"

namespace stenosis::nn {

using nlohmann::json;

TrainSchedule TrainSchedule::classifier_default() {
  TrainSchedule s;
  s.optimizer = OptimizerKind::adam;
  s.learning_rate = 1e-5;
  s.batch_size = 32;
  s.epochs = 30;
  s.phases = {{1, 15, {"C5", "FC"}}, {16, 30, {}}};
  return s;
}

TrainSchedule TrainSchedule::detector_default() {
  TrainSchedule s;
  s.optimizer = OptimizerKind::momentum;
  s.learning_rate = 8e-4;
  s.momentum = 0.9;
  s.l2_lambda = 4e-4;
  s.batch_size = 32;
  s.steps = 3500;
  return s;
}

json TrainSchedule::to_json() const {
  json phases_j = json::array();
  for (const auto& p : phases) {
    phases_j.push_back({{"first_epoch", p.first_epoch}, {"last_epoch", p.last_epoch}, {"trainable", p.trainable}});
  }
  return {{"optimizer", optimizer == OptimizerKind::adam ? "adam" : "momentum"},
          {"learning_rate", learning_rate},
          {"momentum", momentum},
          {"l2_lambda", l2_lambda},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"steps", steps},
          {"plateau_factor", plateau_factor},
          {"plateau_patience", plateau_patience},
          {"plateau_min_delta", plateau_min_delta},
          {"phases", phases_j},
          {"seed", seed}};
}

TrainSchedule TrainSchedule::from_json(const json& j) {
  try {
    TrainSchedule s;
    const auto opt = j.at("optimizer").get<std::string>();
    if (opt == "adam") {
      s.optimizer = OptimizerKind::adam;
    } else if (opt == "momentum") {
      s.optimizer = OptimizerKind::momentum;
    } else {
      throw ValidationError("schedule: unknown optimizer " + opt);
    }
    s.learning_rate = j.at("learning_rate").get<double>();
    s.momentum = j.at("momentum").get<double>();
    s.l2_lambda = j.at("l2_lambda").get<double>();
    s.batch_size = j.at("batch_size").get<std::size_t>();
    s.epochs = j.at("epochs").get<std::size_t>();
    s.steps = j.at("steps").get<std::size_t>();
    s.plateau_factor = j.at("plateau_factor").get<double>();
    s.plateau_patience = j.at("plateau_patience").get<std::size_t>();
    s.plateau_min_delta = j.at("plateau_min_delta").get<double>();
    for (const auto& p : j.at("phases")) {
      s.phases.push_back({p.at("first_epoch").get<std::size_t>(), p.at("last_epoch").get<std::size_t>(),
                          p.at("trainable").get<std::set<std::string>>()});
    }
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("schedule: ") + e.what());
  }
}

namespace {

void apply_l2(ToyNet& net, double lambda) {
  if (lambda == 0.0) return;
  for (auto& p : net.params()) {
    if (p.is_bias || !p.trainable) continue;
    loss::l2_penalty(p.value, lambda, p.grad);
  }
}

double l2_value(const ToyNet& net, double lambda) {
  if (lambda == 0.0) return 0.0;
  double s = 0.0;
  for (const auto& p : net.params()) {
    if (p.is_bias || !p.trainable) continue;
    s += loss::l2_penalty(p.value, lambda);
  }
  return s;
}

Tensor batch_tensor(std::span<const LabeledImage> data, std::span<const std::size_t> idx) {
  std::vector<const ImageF*> ims;
  ims.reserve(idx.size());
  for (auto i : idx) ims.push_back(&data[i].image);
  return to_tensor(ims);
}

// Mean cross-entropy over a dataset, no gradients.
double dataset_loss(const ToyNet& net, std::span<const LabeledImage> data, std::size_t batch) {
  double total = 0.0;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> grad(net.config().num_classes);
  for (std::size_t b = 0; b < data.size(); b += batch) {
    const std::size_t e = std::min(data.size(), b + batch);
    auto cache = net.forward(batch_tensor(data, std::span(idx).subspan(b, e - b)));
    for (std::size_t i = b; i < e; ++i) {
      total += loss::softmax_cross_entropy(cache.logits.sample(i - b), data[i].label, grad);
    }
  }
  return total / static_cast<double>(data.size());
}

void check_schedule(const TrainSchedule& s) {
  if (s.batch_size == 0) throw ValidationError("schedule: batch size must be positive");
  if (!(s.learning_rate >= 0.0)) throw ValidationError("schedule: learning rate must be >= 0");
  if (!(s.l2_lambda >= 0.0)) throw ValidationError("schedule: l2 lambda must be >= 0");
}

}  // namespace

std::vector<EpochLog> train_classifier(ToyNet& net, std::span<const LabeledImage> train,
                                       std::span<const LabeledImage> val, const TrainSchedule& schedule) {
  if (net.config().kind != NetKind::classifier) throw ValidationError("train_classifier: not a classifier");
  if (train.empty()) throw ValidationError("train_classifier: empty dataset");
  check_schedule(schedule);
  const auto k = static_cast<int>(net.config().num_classes);
  for (const auto& s : train) {
    if (s.label < 0 || s.label >= k) throw ValidationError("train_classifier: label out of range");
  }
  for (const auto& s : val) {
    if (s.label < 0 || s.label >= k) throw ValidationError("train_classifier: label out of range");
  }

  std::mt19937_64 rng(schedule.seed);
  Adam adam(schedule.learning_rate);
  PlateauScheduler plateau(schedule.plateau_factor, schedule.plateau_patience, schedule.plateau_min_delta);
  double lr = schedule.learning_rate;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(static_cast<std::size_t>(k));
  std::vector<EpochLog> log;

  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    entry.learning_rate = lr;
    entry.phase = schedule.phases.size();
    net.set_all_trainable();
    for (std::size_t p = 0; p < schedule.phases.size(); ++p) {
      const auto& ph = schedule.phases[p];
      if (epoch >= ph.first_epoch && epoch <= ph.last_epoch) {
        entry.phase = p;
        if (!ph.trainable.empty()) net.set_trainable_blocks(ph.trainable);
        break;
      }
    }
    adam.set_learning_rate(lr);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < order.size(); b += schedule.batch_size) {
      const std::size_t e = std::min(order.size(), b + schedule.batch_size);
      const auto idx = std::span<const std::size_t>(order).subspan(b, e - b);
      auto cache = net.forward(batch_tensor(train, idx));
      Tensor d_logits(idx.size(), static_cast<std::size_t>(k), 1, 1);
      const double inv = 1.0 / static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& sample = train[idx[i]];
        const auto z = cache.logits.sample(i);
        loss_sum += loss::softmax_cross_entropy(z, sample.label, grad);
        for (std::size_t c = 0; c < grad.size(); ++c) d_logits.at(i, c, 0, 0) = grad[c] * inv;
        const auto best = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
        correct += best == sample.label ? 1 : 0;
      }
      net.zero_grad();
      net.backward_classifier(cache, d_logits);
      apply_l2(net, schedule.l2_lambda);
      adam.step(net.params());
    }
    entry.train_loss = loss_sum / static_cast<double>(train.size()) + l2_value(net, schedule.l2_lambda);
    entry.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    double monitored = entry.train_loss;
    if (!val.empty()) {
      entry.val_loss = dataset_loss(net, val, schedule.batch_size);
      monitored = *entry.val_loss;
    }
    lr = plateau.update(monitored, lr);
    entry.lr_reduced = plateau.fired();
    log.push_back(entry);
  }
  net.set_all_trainable();
  net.zero_grad();
  return log;
}

std::vector<std::vector<double>> predict_classes(const ToyNet& net, std::span<const ImageF> images,
                                                 std::size_t batch_size) {
  if (batch_size == 0) throw ValidationError("predict_classes: batch size must be positive");
  std::vector<std::vector<double>> out;
  for (std::size_t b = 0; b < images.size(); b += batch_size) {
    const std::size_t e = std::min(images.size(), b + batch_size);
    std::vector<const ImageF*> ims;
    for (std::size_t i = b; i < e; ++i) ims.push_back(&images[i]);
    auto probs = ToyNet::class_probabilities(net.forward(to_tensor(ims)));
    for (auto& p : probs) out.push_back(std::move(p));
  }
  return out;
}

std::vector<StepLog> train_detector(ToyNet& net, std::span<const DetectionSample> samples,
                                    const TrainSchedule& schedule, const DetectorTrainOptions& options,
                                    const StepCallback& on_step) {
  if (net.config().kind != NetKind::detector) throw ValidationError("train_detector: not a detector");
  if (samples.empty()) throw ValidationError("train_detector: empty dataset");
  check_schedule(schedule);
  if (options.anchors.anchors_per_location() != net.config().anchors_per_location) {
    throw ValidationError("train_detector: anchor layout does not match the network head");
  }
  const std::size_t w = samples.front().image.width, h = samples.front().image.height;
  for (const auto& s : samples) {
    if (s.image.width != w || s.image.height != h) throw ValidationError("train_detector: frame sizes differ");
  }
  const auto grid = geom::generate_anchors(options.anchors, w, h);
  if (grid.size() != net.anchor_count(h, w)) {
    throw ValidationError("train_detector: anchor strides do not match the pyramid");
  }
  std::vector<geom::MatchAssignment> matches;
  matches.reserve(samples.size());
  for (const auto& s : samples) {
    matches.push_back(geom::match_anchors(grid, s.boxes, options.pos_iou, options.neg_iou));
  }

  std::mt19937_64 rng(schedule.seed);
  MomentumSgd sgd(schedule.learning_rate, schedule.momentum);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<StepLog> log;
  log.reserve(schedule.steps);
  std::vector<geom::RegressionTarget> reg_preds(grid.size());

  for (std::size_t step = 1; step <= schedule.steps; ++step) {
    std::vector<std::size_t> idx;
    while (idx.size() < std::min(schedule.batch_size, samples.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    std::vector<ImageF> frames;
    frames.reserve(idx.size());
    for (auto i : idx) {
      frames.push_back(options.augment ? data::augment_random(samples[i].image, options.augment_ranges, rng)
                                       : samples[i].image);
    }
    std::vector<const ImageF*> ptrs;
    for (const auto& f : frames) ptrs.push_back(&f);
    const auto cache = net.forward(to_tensor(ptrs));
    const auto out = ToyNet::detector_output(cache);

    const double inv = 1.0 / static_cast<double>(idx.size());
    StepLog entry;
    entry.step = step;
    entry.learning_rate = schedule.learning_rate;
    entry.loss.normalizer = 0.0;
    std::vector<std::vector<double>> d_probs(idx.size()), d_regs(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      for (std::size_t a = 0; a < grid.size(); ++a) {
        reg_preds[a] = {out.regs[b][4 * a], out.regs[b][4 * a + 1], out.regs[b][4 * a + 2], out.regs[b][4 * a + 3]};
      }
      auto dl = loss::detection_loss(out.probs[b], matches[idx[b]], reg_preds, options.focal, 0.0, {});
      entry.loss.cls_loss += dl.report.cls_loss * inv;
      entry.loss.reg_loss += dl.report.reg_loss * inv;
      entry.loss.normalizer += dl.report.normalizer * inv;
      d_probs[b] = std::move(dl.d_cls_probs);
      for (double& g : d_probs[b]) g *= inv;
      d_regs[b].resize(4 * grid.size());
      for (std::size_t a = 0; a < grid.size(); ++a) {
        const auto& g = dl.d_reg_preds[a];
        d_regs[b][4 * a] = g.tx * inv;
        d_regs[b][4 * a + 1] = g.ty * inv;
        d_regs[b][4 * a + 2] = g.tw * inv;
        d_regs[b][4 * a + 3] = g.th * inv;
      }
    }
    entry.loss.l2_penalty = l2_value(net, schedule.l2_lambda);
    entry.loss.total = entry.loss.cls_loss + entry.loss.reg_loss + entry.loss.l2_penalty;

    net.zero_grad();
    net.backward_detector(cache, d_probs, d_regs);
    apply_l2(net, schedule.l2_lambda);
    sgd.step(net.params());
    log.push_back(entry);
    if (on_step) on_step(entry);
  }
  net.zero_grad();
  return log;
}

std::vector<infer::Detection> detect(const ToyNet& net, const ImageF& image, const geom::AnchorConfig& anchors,
                                     const infer::NmsParams& nms) {
  if (net.config().kind != NetKind::detector) throw ValidationError("detect: not a detector");
  const auto grid = geom::generate_anchors(anchors, image.width, image.height);
  if (grid.size() != net.anchor_count(image.height, image.width)) {
    throw ValidationError("detect: anchor layout does not match the network");
  }
  const auto cache = net.forward(to_tensor({&image}));
  const auto out = ToyNet::detector_output(cache);
  std::vector<geom::RegressionTarget> regs(grid.size());
  for (std::size_t a = 0; a < grid.size(); ++a) {
    regs[a] = {out.regs[0][4 * a], out.regs[0][4 * a + 1], out.regs[0][4 * a + 2], out.regs[0][4 * a + 3]};
  }
  return infer::infer(out.probs[0], regs, grid, static_cast<double>(image.width),
                      static_cast<double>(image.height), nms);
}

}  // namespace stenosis::nn
