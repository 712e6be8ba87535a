// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/trainer/policy.hpp"

#include <algorithm>
#include <cmath>

#include "emma/error.hpp"

namespace emma {

void TrainPolicy::validate() const {
  auto finite_pos = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!finite_pos(base_lr)) throw ConfigError("train.base_lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!finite_pos(eps)) throw ConfigError("train.eps must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(warmup_floor > 0.0 && warmup_floor <= 1.0)) throw ConfigError("train.warmup_floor must lie in (0, 1]");
  if (!finite_pos(clip_norm)) throw ConfigError("train.clip_norm must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(cond_dropout >= 0.0 && cond_dropout < 1.0)) throw ConfigError("train.cond_dropout must lie in [0, 1)");
  for (double p : {p_mention_angle, p_mention_radius}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("train.p_mention_* must lie in [0, 1]");
  }
  if (log_every == 0) throw ConfigError("train.log_every must be positive");
}

double warmup_lr(std::size_t iter, const TrainPolicy& policy) {
  double frac = 1.0;
  if (policy.warmup_iters > 0) {
    frac = std::min(static_cast<double>(iter) / static_cast<double>(policy.warmup_iters), 1.0);
  }
  return policy.base_lr * (policy.warmup_floor + (1.0 - policy.warmup_floor) * frac);
}

double clip_grad_norm(std::span<const GradRef> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.grad) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient in '" + g.name + "'");
      sq += v * v;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& g : grads) {
      for (double& v : g.grad) v *= factor;
    }
  }
  return norm;
}

void adamw_step(std::span<const ParamSlot> slots, OptimizerState& state, double lr, const TrainPolicy& policy) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(policy.beta1, t);
  const double c2 = 1.0 - std::pow(policy.beta2, t);
  for (const auto& slot : slots) {
    auto values = slot.param->data();
    if (slot.grad.size() != values.size()) throw ShapeError("gradient size mismatch for '" + slot.name + "'");
    auto& mom = state.moments[slot.name];
    if (mom.m.empty()) {
      mom.m.assign(values.size(), 0.0);
      mom.v.assign(values.size(), 0.0);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = slot.grad[i];
      mom.m[i] = policy.beta1 * mom.m[i] + (1.0 - policy.beta1) * g;
      mom.v[i] = policy.beta2 * mom.v[i] + (1.0 - policy.beta2) * g * g;
      const double mhat = mom.m[i] / c1;
      const double vhat = mom.v[i] / c2;
      values[i] -= lr * policy.weight_decay * values[i];
      values[i] -= lr * mhat / (std::sqrt(vhat) + policy.eps);
    }
  }
}

}  // namespace emma
