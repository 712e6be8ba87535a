// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/connector/gradcheck_setup.hpp"

#include <cmath>
#include <vector>

#include "emma/connector/connector.hpp"
#include "emma/error.hpp"
#include "emma/numerics/ops.hpp"

namespace emma {

namespace {

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
}

}  // namespace

void randomize_for_gradcheck(ConnectorParams& base, BranchParams& branch, Rng& rng) {
  auto fill = [&](const std::string& name, Tensor& t) {
    const bool matrix = t.rank() == 2 && t.rows() > 1 && name != "latents" && name != "text_null";
    fill_normal(t, rng, matrix ? 0.6 / std::sqrt(static_cast<double>(t.rows())) : 0.3);
  };
  for_each_param(base, fill);
  for_each_param(branch, "agpr", fill);
  auto hidden_bias = [&](const std::string& name, Tensor& t) {
    if (name.find("hidden.b") != std::string::npos)
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1.0 + 0.2 * rng.normal();
  };
  for_each_param(base, hidden_bias);
  for_each_param(branch, "agpr", hidden_bias);
  for (auto& level : branch.levels) {
    level.gate.attn_global[0] = 0.9;
    level.gate.ffn_global[0] = -0.8;
    if (level.gate.attn_proj) (*level.gate.attn_proj->b)[0] = 1.0;
    if (level.gate.ffn_proj) (*level.gate.ffn_proj->b)[0] = 1.0;
  }
}

GradCheckReport connector_grad_check(const ConnectorConfig& cfg, const std::string& modality, std::uint64_t seed,
                                     double h) {
  cfg.validate();
  const auto it = cfg.modality_dims.find(modality);
  if (it == cfg.modality_dims.end()) throw CapabilityError("modality '" + modality + "' is not registered");
  Rng rng(seed);
  auto base = init_connector(cfg, rng);
  auto branch = init_branch(cfg, modality, rng);
  randomize_for_gradcheck(base, branch, rng);
  const auto text = ConditionStream::text(rng.normal_tensor({cfg.text_tokens, cfg.text_dim}));
  const auto cond = ConditionStream::extra(modality, rng.normal_tensor({2, it->second}));
  const Tensor probe = rng.normal_tensor({cfg.num_latents, cfg.d_model});
  const int t = 7;

  std::vector<ParamRef> params;
  for_each_param(base, [&](const std::string& n, Tensor& x) { params.push_back({n, &x}); });
  for_each_param(branch, "agpr", [&](const std::string& n, Tensor& x) { params.push_back({n, &x}); });
  const BranchInput in{&branch, &cond};
  return grad_check(
      [&](Binder& b) {
        const auto out = connector_forward(b, cfg, base, &text, std::span(&in, 1), time_embed(t, cfg.d_time), false);
        return ops::sum(ops::mul(out.tokens, b.tape().constant(probe)));
      },
      params, h);
}

}  // namespace emma
