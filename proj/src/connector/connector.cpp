// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/connector/connector.hpp"

#include <cmath>
#include <string>

#include "emma/error.hpp"
#include "emma/numerics/ops.hpp"

namespace emma {

namespace {

Var apply_linear(Binder& bind, Var x, const Linear& l) {
  if (l.b) return ops::linear(x, bind(l.w), bind(*l.b));
  return ops::linear(x, bind(l.w));
}

void expect_shape(const Tensor& t, const Shape& want, const std::string& what) {
  if (t.shape() != want) {
    throw ShapeError(what + " has shape " + shape_str(t.shape()) + ", expected " + shape_str(want));
  }
}

}  // namespace

TimeEmbedding time_embed(int t, std::size_t d_time) {
  if (d_time == 0 || d_time % 2 != 0) throw ConfigError("time embedding width must be even, got " + std::to_string(d_time));
  if (t < 0) throw ConfigError("timestep must be non-negative, got " + std::to_string(t));
  std::vector<double> v(d_time);
  const double td = static_cast<double>(t);
  for (std::size_t i = 0; i < d_time / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d_time));
    v[2 * i] = std::sin(td * freq);
    v[2 * i + 1] = std::cos(td * freq);
  }
  return TimeEmbedding{t, Tensor({1, d_time}, std::move(v))};
}

Var adaln(Binder& bind, Var x, Var te, const AdaLNParams& p) {
  const Var h = ops::silu(apply_linear(bind, te, p.hidden));
  const Var scale = apply_linear(bind, h, p.scale);
  const Var shift = apply_linear(bind, h, p.shift);
  const Var normed = ops::layer_norm(x, kLayerNormEps);
  return ops::add_row(ops::mul_row(normed, ops::add_const(scale, 1.0)), shift);
}

Var project_stream(Binder& bind, const ConditionStream& stream, const Linear& proj) {
  if (stream.width() != proj.w.rows()) {
    throw ShapeError("condition stream '" + stream.modality + "' has width " + std::to_string(stream.width()) +
                     ", projection expects " + std::to_string(proj.w.rows()));
  }
  return apply_linear(bind, bind(stream.tokens), proj);
}

Var attend(Binder& bind, Var latents, Var kv, Var te, const AttnParams& p, std::size_t heads) {
  const Var x = adaln(bind, latents, te, p.norm);
  const Var q = apply_linear(bind, x, p.q);
  const Var k = apply_linear(bind, kv, p.k);
  const Var v = apply_linear(bind, kv, p.v);
  const Var o = ops::scaled_dot_attention(ops::split_heads(q, heads), ops::split_heads(k, heads),
                                          ops::split_heads(v, heads));
  return ops::merge_heads(o);
}

Var time_aware_attn(Binder& bind, Var latents, Var kv, Var te, const AttnParams& p, std::size_t heads) {
  return apply_linear(bind, attend(bind, latents, kv, te, p, heads), p.out);
}

Var time_aware_ffn(Binder& bind, Var latents, Var te, const FFNParams& p) {
  const Var x = adaln(bind, latents, te, p.norm);
  return apply_linear(bind, ops::gelu(apply_linear(bind, x, p.up)), p.down);
}

Var pr_block(Binder& bind, Var latents, Var text_kv, Var te, const PRBlockParams& p, std::size_t heads) {
  const Var l1 = ops::add(latents, time_aware_attn(bind, latents, text_kv, te, p.attn, heads));
  return ops::add(l1, time_aware_ffn(bind, l1, te, p.ffn));
}

Var token_gate(Binder& bind, Var latents, const Tensor& global_gate, const std::optional<Linear>& proj,
               double lambda_scale) {
  expect_shape(global_gate, {1, 1}, "global gate");
  // λ·A first so that rescaling λ by c and A by 1/c leaves every downstream product unchanged.
  const Var scaled = ops::scale(bind(global_gate), lambda_scale);
  if (proj) return ops::mul_scalar(apply_linear(bind, latents, *proj), scaled);
  const Var ones = bind.tape().constant(Tensor::filled({latents.shape()[0], 1}, 1.0));
  return ops::mul_scalar(ones, scaled);
}

AgprOutput agpr_block(Binder& bind, Var latents, Var cond_kv, Var te, const AGPRBlockParams& p, std::size_t heads) {
  const GateParams& g = p.gate;
  const Var attn_gate = token_gate(bind, latents, g.attn_global, g.attn_proj, g.lambda_scale);
  const Var attn = time_aware_attn(bind, latents, cond_kv, te, p.attn, heads);
  const Var l1 = ops::add(latents, ops::scale_rows(attn, attn_gate));
  const Var ffn_gate = token_gate(bind, l1, g.ffn_global, g.ffn_proj, g.lambda_scale);
  const Var ffn = time_aware_ffn(bind, l1, te, p.ffn);
  const Var l2 = ops::add(l1, ops::scale_rows(ffn, ffn_gate));
  return AgprOutput{l2, attn_gate, ffn_gate};
}

void check_connector_params(const ConnectorConfig& cfg, const ConnectorParams& params) {
  if (params.pr.size() != cfg.depth) {
    throw ShapeError("connector has " + std::to_string(params.pr.size()) + " PR levels, config depth is " +
                     std::to_string(cfg.depth));
  }
  expect_shape(params.latents, {cfg.num_latents, cfg.d_model}, "latents");
  expect_shape(params.text_proj.w, {cfg.text_dim, cfg.d_model}, "text_proj.w");
  if (params.text_null) expect_shape(*params.text_null, {cfg.text_tokens, cfg.text_dim}, "text_null");
}

void check_branch_params(const ConnectorConfig& cfg, const BranchParams& branch) {
  auto it = cfg.modality_dims.find(branch.modality);
  if (it == cfg.modality_dims.end()) {
    throw CapabilityError("modality '" + branch.modality + "' has no registered input projection");
  }
  if (branch.levels.size() != cfg.depth) {
    throw ShapeError("branch '" + branch.modality + "' has " + std::to_string(branch.levels.size()) +
                     " AGPR levels, config depth is " + std::to_string(cfg.depth));
  }
  expect_shape(branch.cond_proj.w, {it->second, cfg.d_model}, "cond_proj.w");
}

Var text_keys(Binder& bind, const ConnectorConfig& cfg, const ConnectorParams& params, const ConditionStream* text) {
  if (text == nullptr) {
    if (!params.text_null) throw CapabilityError("model has no null-condition embedding");
    return apply_linear(bind, bind(*params.text_null), params.text_proj);
  }
  if (text->kind != StreamKind::text_proxy) {
    throw CapabilityError("PR block expects a text_proxy stream, got modality '" + text->modality + "'");
  }
  if (text->width() != cfg.text_dim) {
    throw ShapeError("text stream width " + std::to_string(text->width()) + " != " + std::to_string(cfg.text_dim));
  }
  return project_stream(bind, *text, params.text_proj);
}

Var branch_keys(Binder& bind, const ConnectorConfig& cfg, const BranchParams& branch,
                const ConditionStream& condition) {
  if (condition.kind != StreamKind::extra_modality) {
    throw CapabilityError("AGPR branch '" + branch.modality + "' expects an extra-modality stream");
  }
  if (cfg.modality_dims.count(condition.modality) == 0) {
    throw CapabilityError("modality '" + condition.modality + "' has no registered input projection");
  }
  if (condition.modality != branch.modality) {
    throw CapabilityError("branch trained on '" + branch.modality + "' received a '" + condition.modality + "' stream");
  }
  return project_stream(bind, condition, branch.cond_proj);
}

Var pr_block(Binder& bind, const ConnectorConfig& cfg, const ConnectorParams& params, std::size_t level, Var latents,
             const ConditionStream& text, Var te) {
  if (level >= params.pr.size()) throw ShapeError("PR level " + std::to_string(level) + " out of range");
  return pr_block(bind, latents, text_keys(bind, cfg, params, &text), te, params.pr[level], cfg.n_heads);
}

AgprOutput agpr_block(Binder& bind, const ConnectorConfig& cfg, const BranchParams& branch, std::size_t level,
                      Var latents, const ConditionStream& condition, Var te) {
  if (level >= branch.levels.size()) throw ShapeError("AGPR level " + std::to_string(level) + " out of range");
  return agpr_block(bind, latents, branch_keys(bind, cfg, branch, condition), te, branch.levels[level], cfg.n_heads);
}

GateRecord make_gate_record(std::size_t layer, const AgprOutput& out) {
  const auto& a = out.attn_gate.value();
  const auto& f = out.ffn_gate.value();
  return GateRecord{layer, Tensor({a.size()}, a.values()), Tensor({f.size()}, f.values())};
}

ConnectorOutput connector_forward(Binder& bind, const ConnectorConfig& cfg, const ConnectorParams& params,
                                  const ConditionStream* text, std::span<const BranchInput> branches,
                                  const TimeEmbedding& te, bool record_gates) {
  check_connector_params(cfg, params);
  if (branches.size() > 1) throw CompositionError("connector_forward takes at most one branch; use the composer");
  expect_shape(te.vector, {1, cfg.d_time}, "time embedding");

  std::optional<Var> cond_kv;
  const BranchParams* branch = nullptr;
  if (!branches.empty()) {
    branch = branches[0].params;
    if (branch == nullptr || branches[0].condition == nullptr) throw ConfigError("branch input is incomplete");
    check_branch_params(cfg, *branch);
    cond_kv = branch_keys(bind, cfg, *branch, *branches[0].condition);
  }

  const Var te_var = bind.tape().constant(te.vector);
  const Var text_kv = text_keys(bind, cfg, params, text);
  ConnectorOutput out{bind(params.latents), {}};
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    out.tokens = pr_block(bind, out.tokens, text_kv, te_var, params.pr[l], cfg.n_heads);
    if (branch != nullptr) {
      const AgprOutput a = agpr_block(bind, out.tokens, *cond_kv, te_var, branch->levels[l], cfg.n_heads);
      out.tokens = a.latents;
      if (record_gates) out.gates.push_back(make_gate_record(l, a));
    }
  }
  return out;
}

}  // namespace emma
