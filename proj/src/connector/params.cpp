// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/connector/params.hpp"

#include <cmath>

#include "emma/connector/condition.hpp"
#include "emma/error.hpp"

namespace emma {

std::string_view to_string(GateMode mode) {
  return mode == GateMode::separable ? "separable" : "shared_scalar";
}

GateMode parse_gate_mode(std::string_view text) {
  if (text == "separable") return GateMode::separable;
  if (text == "shared_scalar") return GateMode::shared_scalar;
  throw ConfigError("unknown gate_mode '" + std::string(text) + "' (expected separable or shared_scalar)");
}

void ConnectorConfig::validate() const {
  if (num_latents < 1) throw ConfigError("connector.K must be at least 1");
  if (d_model < 2) throw ConfigError("connector.d_model must be at least 2");
  if (n_heads < 1 || d_model % n_heads != 0) throw ConfigError("connector.d_model must be divisible by n_heads");
  if (d_time < 2 || d_time % 2 != 0) throw ConfigError("connector.d_time must be even and at least 2");
  if (depth < 1) throw ConfigError("connector.depth must be at least 1");
  if (!(lambda_scale > 0.0) || !std::isfinite(lambda_scale)) throw ConfigError("connector.lambda_scale must be positive");
  if (text_dim < 1 || text_tokens < 1) throw ConfigError("connector text stream dimensions must be positive");
  for (const auto& [name, dim] : modality_dims) {
    if (name == kTextModality) throw ConfigError("modality name 'text' is reserved for the text stream");
    if (dim < 1) throw ConfigError("modality '" + name + "' needs a positive feature width");
  }
}

Linear Linear::init(std::size_t in, std::size_t out, bool bias, Rng& rng) {
  Linear l{rng.normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in))), std::nullopt};
  if (bias) l.b = Tensor::zeros({1, out});
  return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out, bool bias) {
  Linear l{Tensor::zeros({in, out}), std::nullopt};
  if (bias) l.b = Tensor::zeros({1, out});
  return l;
}

namespace {

AdaLNParams init_adaln(const ConnectorConfig& cfg, Rng& rng) {
  return AdaLNParams{Linear::init(cfg.d_time, cfg.d_time, true, rng), Linear::zeros(cfg.d_time, cfg.d_model, true),
                     Linear::zeros(cfg.d_time, cfg.d_model, true)};
}

AttnParams init_attn(const ConnectorConfig& cfg, Rng& rng, bool zero_out) {
  const auto d = cfg.d_model;
  AttnParams p{init_adaln(cfg, rng), Linear::init(d, d, false, rng), Linear::init(d, d, false, rng),
               Linear::init(d, d, false, rng), Linear::zeros(d, d, true)};
  if (!zero_out) p.out = Linear::init(d, d, true, rng);
  return p;
}

FFNParams init_ffn(const ConnectorConfig& cfg, Rng& rng, bool zero_out) {
  const auto d = cfg.d_model, h = cfg.ffn_hidden();
  FFNParams p{init_adaln(cfg, rng), Linear::init(d, h, true, rng), Linear::zeros(h, d, true)};
  if (!zero_out) p.down = Linear::init(h, d, true, rng);
  return p;
}

// Separable gate starts as the constant 1 (zero weights, unit bias) so λ·Linear(L)·A == λ·A at init
// and the first updates of A see a non-degenerate gate.
Linear init_gate_proj(const ConnectorConfig& cfg) {
  Linear l = Linear::zeros(cfg.d_model, 1, true);
  (*l.b)[0] = 1.0;
  return l;
}

template <class L, class F>
void visit_linear(L& l, const std::string& name, const F& f) {
  f(name + ".w", l.w);
  if (l.b) f(name + ".b", *l.b);
}

template <class A, class F>
void visit_adaln(A& a, const std::string& name, const F& f) {
  visit_linear(a.hidden, name + ".hidden", f);
  visit_linear(a.scale, name + ".scale", f);
  visit_linear(a.shift, name + ".shift", f);
}

template <class A, class F>
void visit_attn(A& a, const std::string& name, const F& f) {
  visit_adaln(a.norm, name + ".norm", f);
  visit_linear(a.q, name + ".q", f);
  visit_linear(a.k, name + ".k", f);
  visit_linear(a.v, name + ".v", f);
  visit_linear(a.out, name + ".out", f);
}

template <class P, class F>
void visit_ffn(P& p, const std::string& name, const F& f) {
  visit_adaln(p.norm, name + ".norm", f);
  visit_linear(p.up, name + ".up", f);
  visit_linear(p.down, name + ".down", f);
}

template <class P, class F>
void visit_connector(P& p, const F& f) {
  f(std::string("latents"), p.latents);
  visit_linear(p.text_proj, "text_proj", f);
  if (p.text_null) f(std::string("text_null"), *p.text_null);
  for (std::size_t l = 0; l < p.pr.size(); ++l) {
    const std::string name = "pr." + std::to_string(l);
    visit_attn(p.pr[l].attn, name + ".attn", f);
    visit_ffn(p.pr[l].ffn, name + ".ffn", f);
  }
}

template <class P, class F>
void visit_branch(P& p, const std::string& prefix, const F& f) {
  visit_linear(p.cond_proj, prefix + ".cond_proj", f);
  for (std::size_t l = 0; l < p.levels.size(); ++l) {
    const std::string name = prefix + "." + std::to_string(l);
    auto& level = p.levels[l];
    visit_attn(level.attn, name + ".attn", f);
    visit_ffn(level.ffn, name + ".ffn", f);
    f(name + ".gate.attn_global", level.gate.attn_global);
    f(name + ".gate.ffn_global", level.gate.ffn_global);
    if (level.gate.attn_proj) visit_linear(*level.gate.attn_proj, name + ".gate.attn_proj", f);
    if (level.gate.ffn_proj) visit_linear(*level.gate.ffn_proj, name + ".gate.ffn_proj", f);
  }
}

}  // namespace

ConnectorParams init_connector(const ConnectorConfig& cfg, Rng& rng, bool with_null) {
  cfg.validate();
  ConnectorParams p;
  p.latents = rng.normal_tensor({cfg.num_latents, cfg.d_model});
  p.text_proj = Linear::init(cfg.text_dim, cfg.d_model, true, rng);
  if (with_null) p.text_null = rng.normal_tensor({cfg.text_tokens, cfg.text_dim});
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    PRBlockParams block{init_attn(cfg, rng, true), init_ffn(cfg, rng, true)};
    p.pr.push_back(std::move(block));
  }
  return p;
}

BranchParams init_branch(const ConnectorConfig& cfg, const std::string& modality, Rng& rng) {
  cfg.validate();
  auto it = cfg.modality_dims.find(modality);
  if (it == cfg.modality_dims.end()) throw CapabilityError("modality '" + modality + "' is not registered in the config");
  BranchParams p;
  p.modality = modality;
  p.cond_proj = Linear::init(it->second, cfg.d_model, true, rng);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    AGPRBlockParams level{init_attn(cfg, rng, false), init_ffn(cfg, rng, false), GateParams{}};
    level.gate.lambda_scale = cfg.lambda_scale;
    level.gate.attn_global = Tensor::zeros({1, 1});
    level.gate.ffn_global = Tensor::zeros({1, 1});
    if (cfg.gate_mode == GateMode::separable) {
      level.gate.attn_proj = init_gate_proj(cfg);
      level.gate.ffn_proj = init_gate_proj(cfg);
    }
    p.levels.push_back(std::move(level));
  }
  return p;
}

void for_each_param(ConnectorParams& p, const ParamVisitor& f) { visit_connector(p, f); }
void for_each_param(const ConnectorParams& p, const ConstParamVisitor& f) { visit_connector(p, f); }
void for_each_param(BranchParams& p, const std::string& prefix, const ParamVisitor& f) { visit_branch(p, prefix, f); }
void for_each_param(const BranchParams& p, const std::string& prefix, const ConstParamVisitor& f) {
  visit_branch(p, prefix, f);
}

std::size_t param_count(const ConnectorParams& p) {
  std::size_t n = 0;
  for_each_param(p, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::size_t param_count(const BranchParams& p) {
  std::size_t n = 0;
  for_each_param(p, "agpr", [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

}  // namespace emma
