// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "emma/connector/config.hpp"
#include "emma/numerics/rng.hpp"
#include "emma/numerics/tensor.hpp"

namespace emma {

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
using ConstParamVisitor = std::function<void(const std::string&, const Tensor&)>;

struct Linear {
  Tensor w;                // in×out
  std::optional<Tensor> b;  // 1×out

  static Linear init(std::size_t in, std::size_t out, bool bias, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out, bool bias);
};

// Scale and shift are one-hidden-layer maps of the time embedding with zero-initialized output layers.
struct AdaLNParams {
  Linear hidden;  // d_time → d_time
  Linear scale;   // d_time → d_model
  Linear shift;   // d_time → d_model
};

struct AttnParams {
  AdaLNParams norm;
  Linear q, k, v;  // d_model → d_model, no bias
  Linear out;      // d_model → d_model
};

struct FFNParams {
  AdaLNParams norm;
  Linear up;    // d_model → 4·d_model
  Linear down;  // 4·d_model → d_model
};

struct PRBlockParams {
  AttnParams attn;
  FFNParams ffn;
};

struct GateParams {
  double lambda_scale = 1.0;     // fixed hyperparameter, never a trainable tensor
  Tensor attn_global;            // A, 1×1
  Tensor ffn_global;             // F, 1×1
  std::optional<Linear> attn_proj;  // separable gate d_model → 1; absent in shared_scalar mode
  std::optional<Linear> ffn_proj;

  bool separable() const { return attn_proj.has_value(); }
};

struct AGPRBlockParams {
  AttnParams attn;
  FFNParams ffn;
  GateParams gate;
};

// Text path: learnable latents, text projection, optional null-condition embedding and the PR stack.
struct ConnectorParams {
  Tensor latents;                 // K×d_model
  Linear text_proj;               // text_dim → d_model
  std::optional<Tensor> text_null;  // text_tokens×text_dim
  std::vector<PRBlockParams> pr;
};

// One modality's AGPR weights for every depth level.
struct BranchParams {
  std::string modality;
  Linear cond_proj;  // d_cond → d_model
  std::vector<AGPRBlockParams> levels;
};

// Zero-initialized output projections keep the residual stack an identity at step 0.
ConnectorParams init_connector(const ConnectorConfig& cfg, Rng& rng, bool with_null = true);
// Global gates start at exactly 0; attention/FFN output projections are random so the gates receive signal.
BranchParams init_branch(const ConnectorConfig& cfg, const std::string& modality, Rng& rng);

void for_each_param(ConnectorParams& p, const ParamVisitor& f);
void for_each_param(const ConnectorParams& p, const ConstParamVisitor& f);
void for_each_param(BranchParams& p, const std::string& prefix, const ParamVisitor& f);
void for_each_param(const BranchParams& p, const std::string& prefix, const ConstParamVisitor& f);

std::size_t param_count(const ConnectorParams& p);
std::size_t param_count(const BranchParams& p);

}  // namespace emma
