// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/cli/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <cmath>
#include <map>
#include <set>
#include <optional>
#include <ostream>
#include <sstream>

#include "emma/composer/composer.hpp"
#include "emma/composer/generate.hpp"
#include "emma/connector/gradcheck_setup.hpp"
#include "emma/error.hpp"
#include "emma/evalviz/evalviz.hpp"
#include "emma/trainer/checkpoint.hpp"
#include "emma/trainer/run_config.hpp"
#include "emma/trainer/train.hpp"

namespace emma::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

class VerificationFailure : public Error {
 public:
  using Error::Error;
};

template <class F>
void write_file(const std::string& path, F&& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  body(out);
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

// Refuses outputs that would overwrite one of the command's inputs.
void guard_output(const std::string& out, std::initializer_list<std::string> inputs) {
  for (const auto& in : inputs) {
    if (in.empty() || !fs::exists(in) || !fs::exists(out)) continue;
    if (fs::equivalent(in, out)) throw UsageError("output '" + out + "' would overwrite input '" + in + "'");
  }
}

ModelConfig tiny_gradcheck_model() {
  ModelConfig m;
  m.connector.num_latents = 4;
  m.connector.d_model = 16;
  m.connector.n_heads = 2;
  m.connector.d_time = 8;
  m.connector.depth = 2;
  m.connector = with_task_streams(m.connector, m.task);
  return m;
}

struct TrainArgs {
  std::string stage, modality, config, init, out, loss_log;
  std::optional<std::size_t> iters;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const Stage stage = parse_stage(a.stage);
  if (stage == Stage::agpr_train && a.init.empty()) throw UsageError("--stage agpr requires --init CKPT");
  if (stage == Stage::agpr_train && a.modality.empty()) throw UsageError("--stage agpr requires --modality NAME");
  if (stage == Stage::pr_pretrain && !a.modality.empty()) throw UsageError("--modality only applies to --stage agpr");
  RunConfig rc = load_run_config(a.config);
  if (a.iters) rc.train.iters = *a.iters;
  if (a.seed) rc.seed = *a.seed;
  rc.validate();
  std::string loss_log = !a.loss_log.empty() ? a.loss_log : !rc.loss_log.empty() ? rc.loss_log : a.out + ".loss.csv";
  guard_output(a.out, {a.config, a.init});
  guard_output(loss_log, {a.config, a.init});

  CheckpointBundle init;
  if (!a.init.empty()) {
    init = load_checkpoint(a.init);
    if (!(init.config == rc.model)) throw ConfigError("init checkpoint was built with a different model config");
  } else {
    Rng rng(rc.seed);
    init = init_bundle(rc.model, rng);
  }

  TrainOptions opts;
  opts.stage = stage;
  opts.modality = a.modality;
  opts.seed = rc.seed;
  opts.on_log = [&](const LossRecord& r) {
    out << "iter " << r.iter << " loss " << format_double(r.loss) << " lr " << format_double(r.lr) << " grad_norm "
        << format_double(r.grad_norm) << '\n';
  };
  const auto result = train(init, gen_dataset(rc.model.task), rc.train, opts);
  save_checkpoint(result.bundle, a.out);
  write_file(loss_log, [&](std::ostream& f) { write_loss_csv(f, result.losses); });
  out << "wrote " << a.out << " (" << to_string(result.bundle.kind) << ", frozen hash "
      << to_hex(frozen_partition_hash(result.bundle)).substr(0, 16) << ")\n";
  for (const auto& b : result.bundle.branches) out << "branch " << b.branch_id << '\n';
  out << "loss log " << loss_log << '\n';
  return kOk;
}

struct GenerateArgs {
  std::string ckpt, conditions, out;
  std::size_t n = 0;
  std::optional<double> guidance;
  std::uint64_t seed = 0;
  bool deterministic = false;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  guard_output(a.out, {a.ckpt, a.conditions});
  const auto bundle = load_checkpoint(a.ckpt);
  const auto targets = parse_targets_json(read_text_file(a.conditions));
  GenerateOptions opts;
  opts.n_per_target = a.n;
  opts.guidance = a.guidance.value_or(bundle.config.diffusion.guidance_weight);
  opts.deterministic = a.deterministic;
  opts.seed = a.seed;
  const auto g = generate(bundle, targets, opts);
  write_file(a.out, [&](std::ostream& f) { write_samples_csv(f, g.batch, g.labels); });
  out << "wrote " << g.batch.n << " samples for " << targets.size() << " targets to " << a.out << '\n';
  return kOk;
}

int cmd_compose(const std::string& manifest_path, const std::string& out_path, std::ostream& out) {
  guard_output(out_path, {manifest_path});
  const auto entries = parse_manifest(read_text_file(manifest_path), fs::path(manifest_path).parent_path().string());
  if (entries.empty()) throw CompositionError("manifest lists no checkpoints");
  std::vector<CheckpointBundle> ckpts;
  for (const auto& e : entries) {
    guard_output(out_path, {e.path});
    ckpts.push_back(load_checkpoint(e.path));
  }

  const std::string ref_hash = to_hex(frozen_partition_hash(ckpts[0]));
  std::vector<std::string> bad_hash, bad_config;
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    if (!(ckpts[i].config == ckpts[0].config)) bad_config.push_back(entries[i].path);
    if (to_hex(frozen_partition_hash(ckpts[i])) != ref_hash) bad_hash.push_back(entries[i].path);
  }
  if (!bad_config.empty() || !bad_hash.empty()) {
    std::string msg = "composition mismatch against " + entries[0].path + ":";
    for (const auto& p : bad_config) msg += "\n  config differs: " + p;
    for (const auto& p : bad_hash) msg += "\n  frozen partition hash differs: " + p;
    throw CompositionError(msg);
  }

  std::vector<MergeSource> sources;
  for (std::size_t i = 0; i < ckpts.size(); ++i) sources.push_back({&ckpts[i], entries[i].blend, entries[i].time_override});
  const ComposedModel model = merge_checkpoints(sources);
  save_checkpoint(model.bundle(), out_path);
  out << "frozen partition hash " << ref_hash << " verified across " << ckpts.size() << " checkpoints: OK\n";
  for (const auto& b : model.branches()) {
    out << "branch " << b.branch_id << " blend " << format_double(b.blend);
    if (b.time_override) out << " t " << *b.time_override;
    out << '\n';
  }
  out << "wrote " << out_path << '\n';
  return kOk;
}

int cmd_gate_viz(const std::string& ckpt, const std::string& probe_path, const std::string& dir, double q,
                 std::ostream& out) {
  const auto bundle = load_checkpoint(ckpt);
  const ProbeSpec probe = probe_path.empty() ? ProbeSpec{} : parse_probe_json(read_text_file(probe_path));
  if (!(q > 0.0 && q < 1.0)) throw UsageError("--q must lie in (0, 1)");
  const auto maps = gate_heatmaps(bundle, probe);
  if (maps.empty()) throw CapabilityError("checkpoint has no AGPR branches to visualize");
  fs::create_directories(dir);

  std::map<std::string, int> seen;
  std::ostringstream summary;
  std::vector<std::set<std::size_t>> tops;
  for (const auto& h : maps) {
    const int dup = seen[h.branch_id]++;
    const std::string name = h.branch_id + (dup > 0 ? "." + std::to_string(dup) : "") + ".csv";
    write_file((fs::path(dir) / name).string(), [&](std::ostream& f) { export_gate_heatmap(f, h); });
    tops.push_back(top_quartile_tokens(h.attn));
    summary << "branch=" << h.branch_id << " file=" << name << " attn_sparsity=" << format_double(gate_sparsity(h.attn, q))
            << " ffn_sparsity=" << format_double(gate_sparsity(h.ffn, q)) << " top_tokens=";
    bool first = true;
    for (auto t : tops.back()) {
      summary << (first ? "" : ",") << t;
      first = false;
    }
    summary << '\n';
  }
  bool distinct = true;
  for (std::size_t i = 0; i < tops.size(); ++i)
    for (std::size_t j = i + 1; j < tops.size(); ++j) distinct &= tops[i] != tops[j];
  if (tops.size() > 1) summary << "top_token_sets_distinct=" << (distinct ? "yes" : "no") << '\n';
  write_file((fs::path(dir) / "summary.txt").string(), [&](std::ostream& f) { f << summary.str(); });
  out << summary.str();
  return kOk;
}

int cmd_gradcheck(const std::string& config, double tolerance, std::uint64_t seed, const std::string& modality,
                  std::ostream& out) {
  const ModelConfig model = config.empty() ? tiny_gradcheck_model() : load_run_config(config).model;
  Rng shapes(0);
  const std::size_t n = param_count(init_connector(model.connector, shapes)) +
                        param_count(init_branch(model.connector, modality, shapes));
  if (n > kGradcheckMaxParams) {
    throw UsageError("gradcheck config has " + std::to_string(n) + " parameters; the limit is " +
                     std::to_string(kGradcheckMaxParams));
  }
  const auto rep = connector_grad_check(model.connector, modality, seed, 1e-5);
  out << "parameters=" << n << " coordinates=" << rep.coordinates << " max_rel_err=" << format_double(rep.max_rel_err)
      << " worst=" << rep.worst_param << "[" << rep.worst_index << "] analytic=" << format_double(rep.worst_analytic)
      << " numeric=" << format_double(rep.worst_numeric) << '\n';
  if (!(rep.max_rel_err < tolerance)) {
    throw VerificationFailure("gradient check failed at " + rep.worst_param + "[" + std::to_string(rep.worst_index) +
                              "]: relative error " + format_double(rep.max_rel_err) + " >= tolerance " +
                              format_double(tolerance));
  }
  out << "gradcheck PASS\n";
  return kOk;
}

int cmd_eval(const std::string& samples_path, const std::string& ckpt, const std::string& config,
             const std::string& out_path, std::ostream& out) {
  if (ckpt.empty() == config.empty()) throw UsageError("eval needs exactly one of --ckpt or --config");
  const TaskSpec task = ckpt.empty() ? load_run_config(config).model.task : load_checkpoint(ckpt).config.task;
  std::ifstream in(samples_path);
  if (!in) throw ConfigError("cannot open '" + samples_path + "'");
  const auto s = read_samples_csv(in);
  std::vector<CellLabel> intended;
  for (const auto& l : s.labels) {
    const auto c = parse_cell_label(l);
    if (!c) throw ConfigError("sample label '" + l + "' does not name a full cell");
    intended.push_back(*c);
  }
  const auto rep = adherence_score(s.batch, intended, task);
  write_adherence_report(out, rep);
  if (!out_path.empty()) {
    guard_output(out_path, {samples_path});
    write_file(out_path, [&](std::ostream& f) { write_adherence_report(f, rep); });
  }
  return kOk;
}

int cmd_dataset(const std::string& config, const std::string& out_path, std::ostream& out) {
  guard_output(out_path, {config});
  const RunConfig rc = load_run_config(config);
  const auto data = gen_dataset(rc.model.task);
  write_file(out_path, [&](std::ostream& f) { write_dataset_csv(f, data); });
  write_file(out_path + ".spec.json", [&](std::ostream& f) { f << task_to_json(rc.model.task) << '\n'; });
  out << "wrote " << data.size() << " samples to " << out_path << '\n';
  return kOk;
}

}  // namespace

std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::string& base_dir) {
  std::vector<ManifestEntry> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> fields;
    for (std::string f; ls >> f;) fields.push_back(f);
    if (fields.empty()) continue;
    const std::string where = "manifest line " + std::to_string(lineno);
    if (fields.size() < 2 || fields.size() > 3) throw ConfigError(where + ": expected `path blend [time_override]`");
    ManifestEntry e;
    fs::path p(fields[0]);
    e.path = p.is_absolute() || base_dir.empty() ? p.string() : (fs::path(base_dir) / p).string();
    std::size_t used = 0;
    try {
      e.blend = std::stod(fields[1], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != fields[1].size() || !std::isfinite(e.blend)) throw ConfigError(where + ": bad blend weight '" + fields[1] + "'");
    if (fields.size() == 3) {
      int t = 0;
      try {
        t = std::stoi(fields[2], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != fields[2].size() || t < 0) throw ConfigError(where + ": bad time override '" + fields[2] + "'");
      e.time_override = t;
    }
    out.push_back(std::move(e));
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EMMA connector: training, composition and evaluation of a toy conditional diffusion model", "emma"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train the text path (pr) or one modality branch (agpr)");
  train_cmd->add_option("--stage", ta.stage, "pr or agpr")->required();
  train_cmd->add_option("--modality", ta.modality, "Branch modality for the agpr stage");
  train_cmd->add_option("--config", ta.config, "Run config JSON")->required();
  train_cmd->add_option("--init", ta.init, "Initial checkpoint (required for agpr)");
  train_cmd->add_option("--out", ta.out, "Output checkpoint")->required();
  train_cmd->add_option("--iters", ta.iters, "Override train.iters");
  train_cmd->add_option("--seed", ta.seed, "Override the config seed");
  train_cmd->add_option("--loss-log", ta.loss_log, "Loss CSV (default: <out>.loss.csv)");

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "Sample points for each target in a conditions file");
  gen_cmd->add_option("--ckpt", ga.ckpt, "Checkpoint (single branch or composed)")->required();
  gen_cmd->add_option("--conditions", ga.conditions, "Conditions JSON")->required();
  gen_cmd->add_option("--n", ga.n, "Samples per target")->required();
  gen_cmd->add_option("--guidance", ga.guidance, "Classifier-free guidance weight (default: from checkpoint)");
  gen_cmd->add_option("--seed", ga.seed, "Sampling seed");
  gen_cmd->add_option("--out", ga.out, "Output CSV")->required();
  gen_cmd->add_flag("--deterministic", ga.deterministic, "Variance-free reverse chain");

  std::string manifest, compose_out;
  auto* compose_cmd = app.add_subcommand("compose", "Assemble trained branches without further training");
  compose_cmd->add_option("--manifest", manifest, "Manifest: `checkpoint blend [time_override]` per line")->required();
  compose_cmd->add_option("--out", compose_out, "Composed checkpoint")->required();

  std::string viz_ckpt, probe, viz_dir;
  double q = 0.5;
  auto* viz_cmd = app.add_subcommand("gate-viz", "Export per-branch gate heatmaps and sparsity");
  viz_cmd->add_option("--ckpt", viz_ckpt, "Checkpoint with branches")->required();
  viz_cmd->add_option("--probe-config", probe, "Probe JSON (targets, timesteps)");
  viz_cmd->add_option("--out", viz_dir, "Output directory")->required();
  viz_cmd->add_option("--q", q, "Sparsity threshold as a fraction of the maximum");

  std::string gc_config, gc_modality = kAngleModality;
  double tolerance = 1e-4;
  std::uint64_t gc_seed = kGradcheckSeed;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare connector gradients with central differences");
  gc_cmd->add_option("--config", gc_config, "Run config (default: K=4, d_model=16, depth=2)");
  gc_cmd->add_option("--tolerance", tolerance, "Maximum relative error");
  gc_cmd->add_option("--seed", gc_seed, "Seed for parameters, streams and probe");
  gc_cmd->add_option("--modality", gc_modality, "Branch modality");

  std::string ev_samples, ev_ckpt, ev_config, ev_out;
  auto* eval_cmd = app.add_subcommand("eval", "Adherence of a sample CSV to its condition labels");
  eval_cmd->add_option("--samples", ev_samples, "Sample CSV from generate")->required();
  eval_cmd->add_option("--ckpt", ev_ckpt, "Checkpoint providing the task");
  eval_cmd->add_option("--config", ev_config, "Run config providing the task");
  eval_cmd->add_option("--out", ev_out, "Report file");

  std::string ds_config, ds_out;
  auto* ds_cmd = app.add_subcommand("dataset", "Dump the synthetic training set");
  ds_cmd->add_option("--config", ds_config, "Run config")->required();
  ds_cmd->add_option("--out", ds_out, "Output CSV")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(ta, out);
    if (*gen_cmd) return cmd_generate(ga, out);
    if (*compose_cmd) return cmd_compose(manifest, compose_out, out);
    if (*viz_cmd) return cmd_gate_viz(viz_ckpt, probe, viz_dir, q, out);
    if (*gc_cmd) return cmd_gradcheck(gc_config, tolerance, gc_seed, gc_modality, out);
    if (*eval_cmd) return cmd_eval(ev_samples, ev_ckpt, ev_config, ev_out, out);
    if (*ds_cmd) return cmd_dataset(ds_config, ds_out, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const VerificationFailure& e) {
    err << "error: " << e.what() << '\n';
    return kVerificationFailure;
  } catch (const CapabilityError& e) {
    err << "error: " << e.what() << '\n';
    return kMissingCapability;
  } catch (const CompositionError& e) {
    err << "error: " << e.what() << '\n';
    return kCompositionMismatch;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kUsage;
}

}  // namespace emma::cli
