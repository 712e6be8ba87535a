// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/trainer/train.hpp"

#include <ostream>

#include "emma/connector/connector.hpp"
#include "emma/diffusion/diffusion.hpp"
#include "emma/error.hpp"
#include "emma/numerics/ops.hpp"

namespace emma {

Stage parse_stage(std::string_view text) {
  if (text == "pr" || text == "pr_pretrain") return Stage::pr_pretrain;
  if (text == "agpr" || text == "agpr_train") return Stage::agpr_train;
  throw ConfigError("unknown stage '" + std::string(text) + "' (expected pr or agpr)");
}

std::set<std::string> freeze_partition(const CheckpointBundle& model, Stage stage) {
  std::set<std::string> names;
  if (stage == Stage::pr_pretrain) {
    for_each_frozen_param(model, [&](const std::string& n, const Tensor&) { names.insert(n); });
  } else {
    if (model.branches.empty()) throw TrainingError("agpr stage needs a branch under training");
    for_each_param(model.branches.front().params, "branch.0",
                   [&](const std::string& n, const Tensor&) { names.insert(n); });
  }
  return names;
}

Var batch_loss(Binder& bind, const CheckpointBundle& model, const BranchParams* branch, const LossInputs& in,
               const NoiseSchedule& sched) {
  const auto& cfg = model.config;
  if (in.examples.empty()) throw TrainingError("empty batch");
  if (in.timesteps.size() != in.examples.size() || in.noise.size() != in.examples.size()) {
    throw ShapeError("batch_loss: examples, timesteps and noise differ in length");
  }
  std::optional<Var> total;
  for (std::size_t i = 0; i < in.examples.size(); ++i) {
    const auto& ex = in.examples[i];
    const std::size_t t = in.timesteps[i];
    const TimeEmbedding te = time_embed(static_cast<int>(t), cfg.connector.d_time);

    std::vector<BranchInput> inputs;
    if (branch != nullptr) {
      if (!ex.branch) throw TrainingError("agpr example is missing its modality stream");
      inputs.push_back({branch, &*ex.branch});
    }
    const ConditionStream* text = ex.text ? &*ex.text : nullptr;
    const auto conn = connector_forward(bind, cfg.connector, model.base, text, inputs, te, false);

    const Tensor x0 = Tensor::row({ex.x[0], ex.x[1]});
    const Tensor noise = Tensor::row({in.noise[i][0], in.noise[i][1]});
    const Tensor x_t = q_sample(x0, t, noise, sched);
    const Var eps = denoiser_forward(bind, model.denoiser, cfg.diffusion, bind.tape().constant(x_t), t, conn.tokens);
    const Var li = ops::weighted_mse(eps, noise, Tensor::row({ex.weights[0], ex.weights[1]}));
    total = total ? ops::add(*total, li) : li;
  }
  return ops::scale(*total, 1.0 / static_cast<double>(in.examples.size()));
}

namespace {

std::size_t branch_label(const Sample& s, const std::string& modality) {
  return modality == kAngleModality ? s.text_label : s.modal_label;
}

}  // namespace

TrainResult train(const CheckpointBundle& init, const std::vector<Sample>& data, const TrainPolicy& policy,
                  const TrainOptions& opts) {
  policy.validate();
  init.config.validate();
  if (data.empty() && policy.iters > 0) throw TrainingError("training data is empty");
  if (!init.branches.empty()) throw TrainingError("training starts from a checkpoint without branches");
  if (init.kind != BundleKind::pr_pretrain) throw TrainingError("training starts from a pr_pretrain checkpoint");

  const auto& cfg = init.config;
  Rng rng(opts.seed);
  Rng init_rng = rng.fork(1);
  Rng batch_rng = rng.fork(2);

  TrainResult result{init, {}};
  CheckpointBundle& model = result.bundle;
  model.metadata["seed"] = std::to_string(opts.seed);
  model.metadata["iters"] = std::to_string(policy.iters);
  if (opts.stage == Stage::agpr_train) {
    if (!cfg.connector.modality_dims.count(opts.modality)) {
      throw CapabilityError("modality '" + opts.modality + "' is not registered in the config");
    }
    model.kind = BundleKind::agpr_train;
    model.branches.push_back({"", init_branch(cfg.connector, opts.modality, init_rng), 1.0, std::nullopt});
    model.metadata["modality"] = opts.modality;
  }
  model.metadata["stage"] = opts.stage == Stage::pr_pretrain ? "pr" : "agpr";

  const auto trainable = freeze_partition(model, opts.stage);
  std::vector<std::pair<std::string, Tensor*>> params;
  auto collect = [&](const std::string& n, Tensor& t) {
    if (trainable.count(n)) params.emplace_back(n, &t);
  };
  for_each_frozen_param(model, collect);
  for (std::size_t k = 0; k < model.branches.size(); ++k) {
    for_each_param(model.branches[k].params, "branch." + std::to_string(k), collect);
  }

  const NoiseSchedule sched = build_schedule(cfg.diffusion);
  const Codebooks books = make_codebooks(cfg.task);
  const BranchParams* branch = model.branches.empty() ? nullptr : &model.branches.front().params;
  OptimizerState opt;

  for (std::size_t iter = 0; iter < policy.iters; ++iter) {
    LossInputs in;
    for (std::size_t b = 0; b < policy.batch_size; ++b) {
      const Sample& s = data[batch_rng.uniform_int(data.size())];
      TrainExample ex;
      ex.x = s.x;
      if (s.mask) ex.weights = *s.mask;
      if (opts.stage == Stage::pr_pretrain) {
        std::optional<std::size_t> angle, radius;
        if (batch_rng.bernoulli(policy.p_mention_angle)) angle = s.text_label;
        if (batch_rng.bernoulli(policy.p_mention_radius)) radius = s.modal_label;
        ex.text = caption(cfg.task, books, angle, radius);
      } else {
        // The caption never names the branch's own factor but may name the other one.
        std::optional<std::size_t> angle, radius;
        if (opts.modality == kAngleModality && batch_rng.bernoulli(policy.p_mention_radius)) radius = s.modal_label;
        if (opts.modality == kRadiusModality && batch_rng.bernoulli(policy.p_mention_angle)) angle = s.text_label;
        ex.text = caption(cfg.task, books, angle, radius);
        ex.branch = modality_stream(cfg.task, books, opts.modality, branch_label(s, opts.modality));
      }
      in.examples.push_back(std::move(ex));
    }
    if (opts.stage == Stage::pr_pretrain) condition_dropout(in.examples, policy.cond_dropout, batch_rng);
    for (std::size_t b = 0; b < policy.batch_size; ++b) {
      in.timesteps.push_back(batch_rng.uniform_int(cfg.diffusion.T_max));
      in.noise.push_back({batch_rng.normal(), batch_rng.normal()});
    }

    LossRecord rec;
    rec.iter = iter;
    try {
      Tape tape;
      Binder bind(tape);
      for (const auto& [name, t] : params) bind.set_trainable(*t);
      const Var loss = batch_loss(bind, model, branch, in, sched);
      tape.backward(loss);
      rec.loss = loss.value()[0];

      std::vector<std::vector<double>> grads;
      grads.reserve(params.size());
      for (const auto& [name, t] : params) {
        auto g = bind.grad(*t);
        grads.emplace_back(g.begin(), g.end());
        if (grads.back().empty()) grads.back().assign(t->size(), 0.0);
      }
      std::vector<GradRef> refs;
      std::vector<ParamSlot> slots;
      for (std::size_t i = 0; i < params.size(); ++i) {
        refs.push_back({params[i].first, grads[i]});
        slots.push_back({params[i].first, params[i].second, grads[i]});
      }
      rec.grad_norm = clip_grad_norm(refs, policy.clip_norm);
      rec.lr = warmup_lr(iter, policy);
      adamw_step(slots, opt, rec.lr, policy);
      for (const auto& [name, t] : params) {
        if (!t->all_finite()) throw NumericError("parameter '" + name + "' became non-finite");
      }
    } catch (const NumericError& e) {
      throw TrainingError("iteration " + std::to_string(iter) + ": " + e.what());
    }
    result.losses.push_back(rec);
    if (opts.on_log && (iter % policy.log_every == 0 || iter + 1 == policy.iters)) opts.on_log(rec);
  }

  if (opts.stage == Stage::agpr_train) model.branches.front().branch_id = make_branch_id(model.branches.front().params);
  return result;
}

void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& records) {
  out << "iter,loss,lr,grad_norm\n";
  for (const auto& r : records) {
    out << r.iter << ',' << format_double(r.loss) << ',' << format_double(r.lr) << ',' << format_double(r.grad_norm)
        << '\n';
  }
}

}  // namespace emma
