// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/composer/composer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emma/error.hpp"
#include "emma/numerics/ops.hpp"

namespace emma {

ComposedModel::ComposedModel(CheckpointBundle bundle) : bundle_(std::move(bundle)) {
  order_.resize(bundle_.branches.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
    return bundle_.branches[a].branch_id < bundle_.branches[b].branch_id;
  });
}

ComposedModel ComposedModel::from_bundle(CheckpointBundle bundle) {
  bundle.config.validate();
  check_connector_params(bundle.config.connector, bundle.base);
  for (const auto& e : bundle.branches) {
    check_branch_params(bundle.config.connector, e.params);
    if (!std::isfinite(e.blend)) throw ConfigError("blend weight of '" + e.branch_id + "' is not finite");
    if (e.time_override &&
        (*e.time_override < 0 || static_cast<std::size_t>(*e.time_override) >= bundle.config.diffusion.T_max)) {
      throw ConfigError("time override of '" + e.branch_id + "' is outside [0, T_max)");
    }
    if (e.branch_id.empty()) throw ConfigError("branch without an id");
  }
  return ComposedModel(std::move(bundle));
}

ComposedModel merge_checkpoints(std::span<const MergeSource> sources) {
  if (sources.empty()) throw CompositionError("nothing to compose: empty checkpoint list");
  const CheckpointBundle& first = *sources.front().checkpoint;
  const Digest frozen = frozen_partition_hash(first);
  CheckpointBundle out;
  out.kind = BundleKind::composed;
  out.config = first.config;
  out.base = first.base;
  out.denoiser = first.denoiser;
  out.metadata["frozen_hash"] = to_hex(frozen);
  std::string ids;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& src = sources[i];
    if (src.checkpoint == nullptr) throw ConfigError("merge source without a checkpoint");
    if (!(src.checkpoint->config == first.config)) {
      throw CompositionError("checkpoint " + std::to_string(i) + " has a different model config");
    }
    if (frozen_partition_hash(*src.checkpoint) != frozen) {
      throw CompositionError("checkpoint " + std::to_string(i) + " has a different frozen partition hash");
    }
    if (!std::isfinite(src.blend)) throw ConfigError("blend weight " + std::to_string(i) + " is not finite");
    for (const auto& e : src.checkpoint->branches) {
      BranchEntry copy = e;
      copy.blend = e.blend * src.blend;
      if (src.time_override) copy.time_override = src.time_override;
      if (!ids.empty()) ids += ",";
      ids += copy.branch_id;
      out.branches.push_back(std::move(copy));
    }
  }
  out.metadata["branches"] = ids;
  return ComposedModel::from_bundle(std::move(out));
}

ComposedLevel composed_agpr_level(Binder& bind, Var latents, std::span<const LevelBranch> branches,
                                  std::span<const std::size_t> order, std::size_t heads) {
  ComposedLevel out{latents, {}, {}, {}};
  if (order.size() != branches.size()) throw ShapeError("composition order does not cover every branch");
  if (branches.empty()) return out;
  for (const auto& b : branches) {
    if (b.params == nullptr) throw ShapeError("missing AGPR weights for a composed level");
  }

  const std::size_t n = branches.size();
  out.attn_increments.resize(n);
  out.attn_gates.resize(n);
  out.ffn_gates.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = branches[i];
    const GateParams& g = b.params->gate;
    out.attn_gates[i] = token_gate(bind, latents, g.attn_global, g.attn_proj, g.lambda_scale);
    const Var attn = time_aware_attn(bind, latents, b.cond_kv, b.te, b.params->attn, heads);
    out.attn_increments[i] = ops::scale(ops::scale_rows(attn, out.attn_gates[i]), b.blend);
  }
  std::optional<Var> sum;
  for (std::size_t i : order) sum = sum ? ops::add(*sum, out.attn_increments[i]) : out.attn_increments[i];
  const Var l1 = ops::add(latents, *sum);

  std::vector<Var> ffn_inc(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = branches[i];
    const GateParams& g = b.params->gate;
    out.ffn_gates[i] = token_gate(bind, l1, g.ffn_global, g.ffn_proj, g.lambda_scale);
    const Var ffn = time_aware_ffn(bind, l1, b.te, b.params->ffn);
    ffn_inc[i] = ops::scale(ops::scale_rows(ffn, out.ffn_gates[i]), b.blend);
  }
  sum.reset();
  for (std::size_t i : order) sum = sum ? ops::add(*sum, ffn_inc[i]) : ffn_inc[i];
  out.latents = ops::add(l1, *sum);
  return out;
}

ComposedOutput composed_forward(Binder& bind, const ComposedModel& model, const ConditionStream* text,
                                std::span<const ConditionStream* const> conditions, const TimeEmbedding& te,
                                bool record_gates) {
  const auto& cfg = model.config().connector;
  const auto& base = model.bundle().base;
  const auto& branches = model.branches();
  if (conditions.size() != branches.size()) {
    throw CapabilityError("composed model has " + std::to_string(branches.size()) + " branches but " +
                          std::to_string(conditions.size()) + " condition streams were given");
  }

  const Var te_var = bind.tape().constant(te.vector);
  std::vector<Var> kvs, tes;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    if (conditions[i] == nullptr) throw CapabilityError("no condition stream for branch '" + branches[i].branch_id + "'");
    kvs.push_back(branch_keys(bind, cfg, branches[i].params, *conditions[i]));
    tes.push_back(branches[i].time_override
                      ? bind.tape().constant(time_embed(*branches[i].time_override, cfg.d_time).vector)
                      : te_var);
  }
  const Var tkv = text_keys(bind, cfg, base, text);

  ComposedOutput out{bind(base.latents), std::vector<std::vector<GateRecord>>(branches.size())};
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    out.tokens = pr_block(bind, out.tokens, tkv, te_var, base.pr[l], cfg.n_heads);
    std::vector<LevelBranch> level;
    for (std::size_t i = 0; i < branches.size(); ++i) {
      level.push_back({&branches[i].params.levels[l], kvs[i], tes[i], branches[i].blend});
    }
    const ComposedLevel c = composed_agpr_level(bind, out.tokens, level, model.canonical_order(), cfg.n_heads);
    out.tokens = c.latents;
    if (record_gates) {
      for (std::size_t i = 0; i < branches.size(); ++i) {
        out.gates[i].push_back(make_gate_record(l, AgprOutput{c.latents, c.attn_gates[i], c.ffn_gates[i]}));
      }
    }
  }
  return out;
}

ConnectorOutput text_only_forward(Binder& bind, const CheckpointBundle& model, const ConditionStream* text,
                                  const TimeEmbedding& te) {
  return connector_forward(bind, model.config.connector, model.base, text, {}, te, false);
}

}  // namespace emma
