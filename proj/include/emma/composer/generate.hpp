// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emma/composer/composer.hpp"
#include "emma/diffusion/diffusion.hpp"

namespace emma {

// One condition group: caption mentions plus a class label per branch modality.
struct GenerationTarget {
  std::optional<std::size_t> text_angle;
  std::optional<std::size_t> text_radius;
  std::map<std::string, std::size_t> modalities;

  // Angle and radius the samples should land on, from the caption or the modality streams.
  std::optional<std::size_t> intended_angle() const;
  std::optional<std::size_t> intended_radius() const;
  std::string label() const { return cell_label(intended_angle(), intended_radius()); }
};

// Parses {"targets": [{"text": {"angle": 1}, "modalities": {"radius": 2}}, ...]} with strict keys.
std::vector<GenerationTarget> parse_targets_json(const std::string& text);

struct GenerateOptions {
  std::size_t n_per_target = 0;
  double guidance = 1.0;
  bool deterministic = false;
  std::uint64_t seed = 0;
};

struct Generated {
  SampleBatch batch;
  std::vector<std::string> labels;
  std::vector<std::size_t> target_index;  // per sample
};

/// Samples every target in order. Composed bundles run through the composer; all other bundles use
/// the single-branch connector directly. The unconditional pass uses the null text and no branches.
/// Throws CapabilityError when a target names a modality the bundle has no branch for, or vice versa.
Generated generate(const CheckpointBundle& bundle, const std::vector<GenerationTarget>& targets,
                   const GenerateOptions& opts);

}  // namespace emma
