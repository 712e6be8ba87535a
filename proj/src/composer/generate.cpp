// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/composer/generate.hpp"

#include "emma/error.hpp"
#include "emma/util/json_fields.hpp"

namespace emma {

std::optional<std::size_t> GenerationTarget::intended_angle() const {
  if (text_angle) return text_angle;
  if (auto it = modalities.find(kAngleModality); it != modalities.end()) return it->second;
  return std::nullopt;
}

std::optional<std::size_t> GenerationTarget::intended_radius() const {
  if (text_radius) return text_radius;
  if (auto it = modalities.find(kRadiusModality); it != modalities.end()) return it->second;
  return std::nullopt;
}

std::vector<GenerationTarget> parse_targets_json(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("conditions file is not valid JSON: ") + e.what());
  }
  JsonSection top(root, "conditions");
  if (!top.has("targets") || !root.at("targets").is_array()) throw ConfigError("conditions file needs a targets array");
  std::vector<GenerationTarget> out;
  for (const auto& t : top.child("targets")) {
    JsonSection s(t, "target");
    GenerationTarget g;
    if (s.has("text")) {
      JsonSection tx(s.child("text"), "target.text");
      std::optional<std::size_t> a, r;
      if (tx.has("angle")) tx.read("angle", a.emplace());
      if (tx.has("radius")) tx.read("radius", r.emplace());
      tx.finish();
      g.text_angle = a;
      g.text_radius = r;
    }
    std::map<std::string, long long> mods;
    s.read("modalities", mods);
    for (const auto& [m, label] : mods) {
      if (label < 0) throw ConfigError("label for '" + m + "' must be non-negative");
      g.modalities[m] = static_cast<std::size_t>(label);
    }
    s.finish();
    out.push_back(std::move(g));
  }
  top.finish();
  return out;
}

namespace {

void check_labels(const TaskSpec& task, const GenerationTarget& t) {
  if (t.text_angle && *t.text_angle >= task.n_text_classes) throw ConfigError("text angle label out of range");
  if (t.text_radius && *t.text_radius >= task.n_modal_classes) throw ConfigError("text radius label out of range");
  for (const auto& [m, label] : t.modalities) {
    if (m != kAngleModality && m != kRadiusModality) throw CapabilityError("unknown modality '" + m + "'");
    if (label >= modality_classes(task, m)) throw ConfigError("label for '" + m + "' out of range");
  }
}

}  // namespace

Generated generate(const CheckpointBundle& bundle, const std::vector<GenerationTarget>& targets,
                   const GenerateOptions& opts) {
  const auto& cfg = bundle.config;
  const ComposedModel model = ComposedModel::from_bundle(bundle);
  const bool composed = bundle.kind == BundleKind::composed;
  if (!composed && bundle.branches.size() > 1) throw CompositionError("only composed bundles may hold several branches");

  const NoiseSchedule sched = build_schedule(cfg.diffusion);
  const Codebooks books = make_codebooks(cfg.task);
  const Rng root(opts.seed);
  Generated out;
  out.batch.dim = cfg.diffusion.sample_dim;

  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    const auto& target = targets[ti];
    check_labels(cfg.task, target);
    for (const auto& [m, label] : target.modalities) {
      bool found = false;
      for (const auto& b : bundle.branches) found |= b.params.modality == m;
      if (!found) throw CapabilityError("checkpoint has no branch for modality '" + m + "'");
    }
    const ConditionStream text = caption(cfg.task, books, target.text_angle, target.text_radius);
    std::vector<ConditionStream> streams;
    for (const auto& b : bundle.branches) {
      auto it = target.modalities.find(b.params.modality);
      if (it == target.modalities.end()) {
        throw CapabilityError("target gives no '" + b.params.modality + "' condition for branch " + b.branch_id);
      }
      streams.push_back(modality_stream(cfg.task, books, b.params.modality, it->second));
    }
    std::vector<const ConditionStream*> ptrs;
    for (const auto& s : streams) ptrs.push_back(&s);

    const TokenFn cond = [&](std::size_t t) {
      Tape tape;
      Binder bind(tape);
      const TimeEmbedding te = time_embed(static_cast<int>(t), cfg.connector.d_time);
      if (composed) return composed_forward(bind, model, &text, ptrs, te, false).tokens.value();
      std::vector<BranchInput> in;
      if (!bundle.branches.empty()) in.push_back({&bundle.branches[0].params, ptrs[0]});
      return connector_forward(bind, cfg.connector, bundle.base, &text, in, te, false).tokens.value();
    };
    TokenFn uncond;
    if (bundle.base.text_null) {
      uncond = [&](std::size_t t) {
        Tape tape;
        Binder bind(tape);
        return text_only_forward(bind, bundle, nullptr, time_embed(static_cast<int>(t), cfg.connector.d_time))
            .tokens.value();
      };
    }

    Rng rng = root.fork(ti);
    const SampleBatch b =
        sample(bundle.denoiser, cfg.diffusion, sched, cond, uncond, {opts.n_per_target, opts.guidance, opts.deterministic}, rng);
    out.batch.values.insert(out.batch.values.end(), b.values.begin(), b.values.end());
    out.batch.n += b.n;
    out.labels.insert(out.labels.end(), b.n, target.label());
    out.target_index.insert(out.target_index.end(), b.n, ti);
  }
  return out;
}

}  // namespace emma
