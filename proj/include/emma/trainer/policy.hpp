// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "emma/numerics/tensor.hpp"

namespace emma {

struct TrainPolicy {
  double base_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_iters = 1000;
  double warmup_floor = 0.1;
  double clip_norm = 1.0;
  std::size_t batch_size = 32;
  std::size_t iters = 2000;
  double cond_dropout = 0.1;      // null-condition rate in the text stage
  double p_mention_angle = 0.6;   // text-stage caption sampling
  double p_mention_radius = 0.6;
  std::size_t log_every = 50;

  void validate() const;
  friend bool operator==(const TrainPolicy&, const TrainPolicy&) = default;
};

// base_lr · (floor + (1 − floor) · min(iter / warmup_iters, 1))
double warmup_lr(std::size_t iter, const TrainPolicy& policy);

struct GradRef {
  std::string name;
  std::span<double> grad;
};

/// Rescales all gradients by max_norm / total when their global L2 norm exceeds max_norm.
/// Returns the pre-clip norm.
double clip_grad_norm(std::span<const GradRef> grads, double max_norm);

struct OptimizerState {
  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> moments;
  std::size_t step = 0;
};

struct ParamSlot {
  std::string name;
  Tensor* param = nullptr;
  std::span<const double> grad;  // same length as *param
};

// Decoupled weight decay followed by the bias-corrected Adam update.
void adamw_step(std::span<const ParamSlot> slots, OptimizerState& state, double lr, const TrainPolicy& policy);

}  // namespace emma
