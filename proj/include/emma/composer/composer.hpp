// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emma/connector/connector.hpp"
#include "emma/trainer/model.hpp"

namespace emma {

/// Shared frozen partition plus an ordered list of branches, immutable once built.
///
/// Branch order follows the merge input; level sums always run in ascending branch_id order.
class ComposedModel {
 public:
  // Validates configs, hashes and branch payloads of a bundle of any kind.
  static ComposedModel from_bundle(CheckpointBundle bundle);

  const CheckpointBundle& bundle() const { return bundle_; }
  const ModelConfig& config() const { return bundle_.config; }
  const std::vector<BranchEntry>& branches() const { return bundle_.branches; }
  // Indices into branches() sorted by branch_id (stable for equal ids).
  const std::vector<std::size_t>& canonical_order() const { return order_; }

 private:
  explicit ComposedModel(CheckpointBundle bundle);
  CheckpointBundle bundle_;
  std::vector<std::size_t> order_;
};

struct MergeSource {
  const CheckpointBundle* checkpoint = nullptr;
  double blend = 1.0;
  std::optional<int> time_override;
};

/// Concatenates the branches of every source, scaling their blend weights.
/// Throws CompositionError on an empty list, differing configs or differing frozen partitions.
ComposedModel merge_checkpoints(std::span<const MergeSource> sources);

struct LevelBranch {
  const AGPRBlockParams* params = nullptr;
  Var cond_kv;
  Var te;
  double blend = 1.0;
};

struct ComposedLevel {
  Var latents;
  std::vector<Var> attn_increments;  // λᵢ·gateᵢ⊙attnᵢ at the input latents, one per branch
  std::vector<Var> attn_gates;
  std::vector<Var> ffn_gates;
};

/// L + Σ λᵢ·AttnGateᵢ(L)⊙attnᵢ(L), then the same for the FFN sublayers on the updated L.
/// `order` lists branch indices in summation order.
ComposedLevel composed_agpr_level(Binder& bind, Var latents, std::span<const LevelBranch> branches,
                                  std::span<const std::size_t> order, std::size_t heads);

struct ComposedOutput {
  Var tokens;
  std::vector<std::vector<GateRecord>> gates;  // per branch, per level
};

/// `conditions` runs parallel to model.branches(); a null text pointer selects the null condition.
ComposedOutput composed_forward(Binder& bind, const ComposedModel& model, const ConditionStream* text,
                                std::span<const ConditionStream* const> conditions, const TimeEmbedding& te,
                                bool record_gates);

/// Branch-free forward that uses only the frozen partition.
ConnectorOutput text_only_forward(Binder& bind, const CheckpointBundle& model, const ConditionStream* text,
                                  const TimeEmbedding& te);

}  // namespace emma
