// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "stenosis/toynet.hpp"

namespace stenosis::nn {

/// Adaptive-moment update with bias correction folded into the step size.
/// Frozen parameters are skipped entirely.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-7);

  void step(std::vector<Parameter>& params);
  double learning_rate() const noexcept { return lr_; }
  void set_learning_rate(double lr) noexcept { lr_ = lr; }
  std::size_t iterations() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// accum = momentum * accum + grad; value -= lr * accum
class MomentumSgd {
 public:
  explicit MomentumSgd(double lr, double momentum = 0.9);

  void step(std::vector<Parameter>& params);
  double learning_rate() const noexcept { return lr_; }
  void set_learning_rate(double lr) noexcept { lr_ = lr; }

 private:
  double lr_, momentum_;
  std::vector<std::vector<double>> accum_;
};

/// Multiplies the learning rate by `factor` once the monitored loss has gone
/// `patience` epochs without improving on the best value by more than
/// `min_delta`; the wait counter then restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.2, std::size_t patience = 3, double min_delta = 1e-4,
                   double min_lr = 0.0);

  /// Returns the learning rate to use for the next epoch.
  double update(double loss, double lr);
  bool fired() const noexcept { return fired_; }
  std::size_t wait() const noexcept { return wait_; }

 private:
  double factor_, min_delta_, min_lr_;
  std::size_t patience_;
  double best_;
  std::size_t wait_ = 0;
  bool fired_ = false;
};

}  // namespace stenosis::nn
