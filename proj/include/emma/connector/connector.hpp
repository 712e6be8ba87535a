// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "emma/connector/condition.hpp"
#include "emma/connector/config.hpp"
#include "emma/connector/params.hpp"
#include "emma/numerics/tape.hpp"

namespace emma {

struct TimeEmbedding {
  int t = 0;
  Tensor vector;  // 1×d_time
};

// Interleaved sin/cos features of t at geometric frequencies 10000^(−2i/d_time).
TimeEmbedding time_embed(int t, std::size_t d_time);

struct GateRecord {
  std::size_t layer_index = 0;
  Tensor token_gates_attn;  // [K]
  Tensor token_gates_ffn;   // [K]
};

inline constexpr double kLayerNormEps = 1e-6;

// layer_norm(x)·(1 + scale(te)) + shift(te)
Var adaln(Binder& bind, Var x, Var te, const AdaLNParams& p);

// Projects a stream from its feature width into d_model.
Var project_stream(Binder& bind, const ConditionStream& stream, const Linear& proj);

// Multi-head cross-attention of adaln(L) over kv, before the output projection.
Var attend(Binder& bind, Var latents, Var kv, Var te, const AttnParams& p, std::size_t heads);

// attend() followed by the output projection; the residual is added by the caller.
Var time_aware_attn(Binder& bind, Var latents, Var kv, Var te, const AttnParams& p, std::size_t heads);

// adaln then Linear → GELU → Linear with hidden width 4·d_model; the residual is added by the caller.
Var time_aware_ffn(Binder& bind, Var latents, Var te, const FFNParams& p);

// L + attn(L, T); then + ffn(L). `text_kv` is the projected text stream.
Var pr_block(Binder& bind, Var latents, Var text_kv, Var te, const PRBlockParams& p, std::size_t heads);

// Per-token gate λ·Linear(L)·G (or λ·G for every token without separable projections), K×1.
Var token_gate(Binder& bind, Var latents, const Tensor& global_gate, const std::optional<Linear>& proj,
               double lambda_scale);

struct AgprOutput {
  Var latents;
  Var attn_gate;  // K×1
  Var ffn_gate;   // K×1, computed on the post-attention latents
};

AgprOutput agpr_block(Binder& bind, Var latents, Var cond_kv, Var te, const AGPRBlockParams& p, std::size_t heads);

// Stream-level entry points that validate modality tags before projecting.
Var pr_block(Binder& bind, const ConnectorConfig& cfg, const ConnectorParams& params, std::size_t level, Var latents,
             const ConditionStream& text, Var te);
AgprOutput agpr_block(Binder& bind, const ConnectorConfig& cfg, const BranchParams& branch, std::size_t level,
                      Var latents, const ConditionStream& condition, Var te);

// Projected keys/values of the text stream (null selects the learned null condition) and of a branch stream.
Var text_keys(Binder& bind, const ConnectorConfig& cfg, const ConnectorParams& params, const ConditionStream* text);
Var branch_keys(Binder& bind, const ConnectorConfig& cfg, const BranchParams& branch, const ConditionStream& condition);

GateRecord make_gate_record(std::size_t layer, const AgprOutput& out);

struct BranchInput {
  const BranchParams* params = nullptr;
  const ConditionStream* condition = nullptr;
};

struct ConnectorOutput {
  Var tokens;  // K×d_model
  std::vector<GateRecord> gates;
};

/// Runs the alternating PR/AGPR stack starting from the learnable latents.
///
/// `text` == nullptr selects the learned null-condition embedding. With no
/// branch every AGPR level is skipped (text-only path); at most one branch is
/// accepted here, multi-branch assembly lives in the composer.
ConnectorOutput connector_forward(Binder& bind, const ConnectorConfig& cfg, const ConnectorParams& params,
                                  const ConditionStream* text, std::span<const BranchInput> branches,
                                  const TimeEmbedding& te, bool record_gates);

// Throws unless params/branch depth and widths agree with cfg.
void check_connector_params(const ConnectorConfig& cfg, const ConnectorParams& params);
void check_branch_params(const ConnectorConfig& cfg, const BranchParams& branch);

// Projected text stream (or null embedding) used by the PR levels.
Var text_keys(Binder& bind, const ConnectorConfig& cfg, const ConnectorParams& params, const ConditionStream* text);
// Projected extra-modality stream for a branch.
Var branch_keys(Binder& bind, const ConnectorConfig& cfg, const BranchParams& branch, const ConditionStream& condition);

}  // namespace emma
