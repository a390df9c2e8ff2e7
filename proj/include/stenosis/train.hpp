// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stenosis/data.hpp"
#include "stenosis/geometry.hpp"
#include "stenosis/image.hpp"
#include "stenosis/inference.hpp"
#include "stenosis/losses.hpp"
#include "stenosis/toynet.hpp"

namespace stenosis::nn {

enum class OptimizerKind { adam, momentum };

struct FreezePhase {
  std::size_t first_epoch = 1;  // inclusive, 1-based
  std::size_t last_epoch = 1;   // inclusive
  std::set<std::string> trainable;  // empty = every block
};

struct TrainSchedule {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-5;
  double momentum = 0.9;
  double l2_lambda = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 0;  // classifier
  std::size_t steps = 0;   // detector
  double plateau_factor = 0.2;
  std::size_t plateau_patience = 3;
  double plateau_min_delta = 1e-4;
  std::vector<FreezePhase> phases;
  std::uint64_t seed = 0;

  static TrainSchedule classifier_default();
  static TrainSchedule detector_default();

  nlohmann::json to_json() const;
  static TrainSchedule from_json(const nlohmann::json& j);
};

struct LabeledImage {
  ImageF image;
  int label = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t phase = 0;  // index into schedule.phases, or phases.size() when none matched
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_loss;
  double learning_rate = 0.0;  // used during this epoch
  bool lr_reduced = false;     // plateau rule fired at the end of this epoch
};

/// Adam with cross-entropy; frozen blocks follow schedule.phases. The plateau
/// rule monitors validation loss, or training loss when `val` is empty.
std::vector<EpochLog> train_classifier(ToyNet& net, std::span<const LabeledImage> train,
                                       std::span<const LabeledImage> val, const TrainSchedule& schedule);

std::vector<std::vector<double>> predict_classes(const ToyNet& net, std::span<const ImageF> images,
                                                 std::size_t batch_size = 32);

struct DetectionSample {
  ImageF image;
  std::vector<geom::Box> boxes;
};

struct DetectorTrainOptions {
  geom::AnchorConfig anchors = detector_anchor_config();
  loss::FocalParams focal;
  double pos_iou = 0.5;
  double neg_iou = 0.4;
  bool augment = true;
  data::AugmentRanges augment_ranges;
};

struct StepLog {
  std::size_t step = 0;
  loss::LossReport loss;  // batch mean, l2 counted once
  double learning_rate = 0.0;
};

using StepCallback = std::function<void(const StepLog&)>;

/// Momentum SGD on the detection objective with online photometric
/// augmentation. All samples must share one frame size.
std::vector<StepLog> train_detector(ToyNet& net, std::span<const DetectionSample> samples,
                                    const TrainSchedule& schedule, const DetectorTrainOptions& options = {},
                                    const StepCallback& on_step = {});

std::vector<infer::Detection> detect(const ToyNet& net, const ImageF& image, const geom::AnchorConfig& anchors,
                                     const infer::NmsParams& nms = {});

}  // namespace stenosis::nn
