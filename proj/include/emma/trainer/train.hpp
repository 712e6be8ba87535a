// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "emma/numerics/tape.hpp"
#include "emma/trainer/model.hpp"
#include "emma/trainer/policy.hpp"

namespace emma {

enum class Stage { pr_pretrain, agpr_train };
Stage parse_stage(std::string_view text);

// Names of the trainable tensors for a stage ("branch.0.*" for the branch under training).
std::set<std::string> freeze_partition(const CheckpointBundle& model, Stage stage);

struct LossRecord {
  std::size_t iter = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct TrainOptions {
  Stage stage = Stage::pr_pretrain;
  std::string modality;  // agpr stage only
  std::uint64_t seed = 0;
  std::function<void(const LossRecord&)> on_log;  // every policy.log_every iterations
};

struct TrainResult {
  CheckpointBundle bundle;
  std::vector<LossRecord> losses;  // every iteration
};

/// pr stage: `init` must be a pr_pretrain bundle without branches (as from init_bundle).
/// agpr stage: `init` is a pr_pretrain checkpoint; a fresh branch for `modality` is added and
/// only its tensors are optimized.
TrainResult train(const CheckpointBundle& init, const std::vector<Sample>& data, const TrainPolicy& policy,
                  const TrainOptions& opts);

// Forward + loss for one batch of examples at given timesteps and noise, used by train() and tests.
struct LossInputs {
  std::vector<TrainExample> examples;
  std::vector<std::size_t> timesteps;
  std::vector<std::array<double, 2>> noise;
};
Var batch_loss(Binder& bind, const CheckpointBundle& model, const BranchParams* branch, const LossInputs& in,
               const NoiseSchedule& sched);

void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& records);

}  // namespace emma
