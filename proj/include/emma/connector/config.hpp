// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>

namespace emma {

// How an AGPR layer turns its global gates into per-token gates.
enum class GateMode {
  separable,      // λ · Linear(L) · A, one value per latent token
  shared_scalar,  // λ · A for every token (ablation without separable gates)
};

std::string_view to_string(GateMode mode);
GateMode parse_gate_mode(std::string_view text);

struct ConnectorConfig {
  std::size_t num_latents = 8;  // K
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_time = 16;
  std::size_t depth = 2;  // number of (PR, AGPR) pairs
  double lambda_scale = 1.0;
  GateMode gate_mode = GateMode::separable;
  std::size_t text_dim = 16;
  std::size_t text_tokens = 4;
  std::map<std::string, std::size_t> modality_dims;  // extra modalities only

  void validate() const;
  std::size_t ffn_hidden() const { return 4 * d_model; }

  friend bool operator==(const ConnectorConfig&, const ConnectorConfig&) = default;
};

}  // namespace emma
