// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emma/connector/params.hpp"
#include "emma/dataset/dataset.hpp"
#include "emma/diffusion/diffusion.hpp"

namespace emma {

// Everything that fixes parameter shapes and data semantics; must match across composed checkpoints.
struct ModelConfig {
  ConnectorConfig connector;
  DiffusionConfig diffusion;
  TaskSpec task;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Connector condition widths follow from the task: text words and one stream per task modality.
ConnectorConfig with_task_streams(ConnectorConfig cfg, const TaskSpec& task);

struct BranchEntry {
  std::string branch_id;
  BranchParams params;
  double blend = 1.0;
  std::optional<int> time_override;
};

enum class BundleKind { pr_pretrain, agpr_train, composed };
std::string_view to_string(BundleKind kind);
BundleKind parse_bundle_kind(std::string_view text);

/// A full model snapshot: frozen partition (latents, text path, PR levels, denoiser) plus branches.
struct CheckpointBundle {
  BundleKind kind = BundleKind::pr_pretrain;
  ModelConfig config;
  std::map<std::string, std::string> metadata;
  ConnectorParams base;
  DenoiserParams denoiser;
  std::vector<BranchEntry> branches;
};

CheckpointBundle init_bundle(const ModelConfig& cfg, Rng& rng);

using Digest = std::array<std::uint8_t, 32>;
std::string to_hex(const Digest& d);
Digest sha256(std::string_view bytes);

// SHA-256 over the name-sorted frozen partition (everything except branches).
Digest frozen_partition_hash(const CheckpointBundle& b);
Digest branch_hash(const BranchParams& p);
// modality + "-" + first 8 hex digits of the branch parameter hash.
std::string make_branch_id(const BranchParams& p);

void for_each_frozen_param(const CheckpointBundle& b, const ConstParamVisitor& f);
void for_each_frozen_param(CheckpointBundle& b, const ParamVisitor& f);

}  // namespace emma
