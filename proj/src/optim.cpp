// SPDX-License-Identifier: Apache-2.0
#include "stenosis/optim.hpp"

#include <cmath>
#include <limits>

#include "stenosis/errors.hpp"

namespace stenosis::nn {

namespace {
void ensure_slots(std::vector<std::vector<double>>& slots, const std::vector<Parameter>& params) {
  if (slots.empty()) {
    slots.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) slots[i].assign(params[i].value.size(), 0.0);
  }
  if (slots.size() != params.size()) throw ValidationError("optimizer: parameter set changed");
}
}  // namespace

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr >= 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw ValidationError("adam: invalid hyperparameters");
  }
}

void Adam::step(std::vector<Parameter>& params) {
  ensure_slots(m_, params);
  ensure_slots(v_, params);
  ++t_;
  const double t = static_cast<double>(t_);
  const double lr_t = lr_ * std::sqrt(1.0 - std::pow(beta2_, t)) / (1.0 - std::pow(beta1_, t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      p.value[k] -= lr_t * m[k] / (std::sqrt(v[k]) + eps_);
    }
  }
}

MomentumSgd::MomentumSgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("sgd: invalid hyperparameters");
}

void MomentumSgd::step(std::vector<Parameter>& params) {
  ensure_slots(accum_, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    auto& a = accum_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      a[k] = momentum_ * a[k] + p.grad[k];
      p.value[k] -= lr_ * a[k];
    }
  }
}

PlateauScheduler::PlateauScheduler(double factor, std::size_t patience, double min_delta, double min_lr)
    : factor_(factor),
      min_delta_(min_delta),
      min_lr_(min_lr),
      patience_(patience),
      best_(std::numeric_limits<double>::infinity()) {
  if (!(factor > 0.0 && factor < 1.0)) throw ValidationError("plateau: factor must be in (0, 1)");
  if (patience == 0) throw ValidationError("plateau: patience must be positive");
}

double PlateauScheduler::update(double loss, double lr) {
  fired_ = false;
  if (loss < best_ - min_delta_) {
    best_ = loss;
    wait_ = 0;
    return lr;
  }
  if (++wait_ >= patience_) {
    wait_ = 0;
    fired_ = true;
    return std::max(lr * factor_, min_lr_);
  }
  return lr;
}

}  // namespace stenosis::nn
