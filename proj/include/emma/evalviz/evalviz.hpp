// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "emma/composer/generate.hpp"

namespace emma {

struct CellLabel {
  std::size_t angle = 0;
  std::size_t radius = 0;
  friend bool operator==(const CellLabel&, const CellLabel&) = default;
};

// Nearest cell mean under Euclidean distance; ties go to the lowest (angle, radius).
CellLabel classify(std::array<double, 2> x, const TaskSpec& task);

// Inverse of cell_label for fully specified cells ("a2-r0"); nullopt for partial or malformed labels.
std::optional<CellLabel> parse_cell_label(const std::string& label);

struct AdherenceReport {
  double text_acc = 0.0;   // angle factor
  double modal_acc = 0.0;  // radius factor
  double joint_acc = 0.0;
  std::size_t n = 0;
};

/// Fraction of samples classified to their intended angle, radius and both.
/// `intended` runs parallel to the batch; throws ConfigError for an empty or mismatched set.
AdherenceReport adherence_score(const SampleBatch& samples, const std::vector<CellLabel>& intended,
                                const TaskSpec& task);

// text_acc=…, modal_acc=…, joint_acc=…, n=… one per line.
void write_adherence_report(std::ostream& out, const AdherenceReport& r);

/// Mean |gate| per (layer, token) for one branch.
struct GateHeatmap {
  std::string branch_id;
  Tensor attn;  // depth × K
  Tensor ffn;   // depth × K
  friend bool operator==(const GateHeatmap&, const GateHeatmap&) = default;
};

struct ProbeSpec {
  std::vector<GenerationTarget> targets;  // empty: every class of every branch modality, generic caption
  std::vector<std::size_t> timesteps;     // empty: {0, T/4, T/2, 3T/4}
};

ProbeSpec parse_probe_json(const std::string& text);

// One heatmap per branch of the bundle, averaged over the probe targets and timesteps.
std::vector<GateHeatmap> gate_heatmaps(const CheckpointBundle& bundle, const ProbeSpec& probe);

// CSV `layer,token,attn_gate,ffn_gate` in (layer, token) order.
void export_gate_heatmap(std::ostream& out, const GateHeatmap& h);
GateHeatmap read_gate_heatmap(std::istream& in, const std::string& branch_id);

// Fraction of entries with magnitude below q·max; an all-zero map counts as fully sparse.
double gate_sparsity(const Tensor& heatmap, double q);

// Indices of the ceil(K/4) tokens with the largest layer-averaged magnitude (ties: lower index).
std::set<std::size_t> top_quartile_tokens(const Tensor& heatmap);

}  // namespace emma
