// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/evalviz/evalviz.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "emma/error.hpp"
#include "emma/util/json_fields.hpp"

namespace emma {

CellLabel classify(std::array<double, 2> x, const TaskSpec& task) {
  CellLabel best;
  double best_d = INFINITY;
  for (std::size_t a = 0; a < task.n_text_classes; ++a) {
    for (std::size_t r = 0; r < task.n_modal_classes; ++r) {
      const auto m = task.cell_mean(a, r);
      const double d = (x[0] - m[0]) * (x[0] - m[0]) + (x[1] - m[1]) * (x[1] - m[1]);
      if (d < best_d) {
        best_d = d;
        best = {a, r};
      }
    }
  }
  return best;
}

std::optional<CellLabel> parse_cell_label(const std::string& label) {
  std::size_t a = 0, r = 0;
  char tail = 0;
  if (std::sscanf(label.c_str(), "a%zu-r%zu%c", &a, &r, &tail) != 2) return std::nullopt;
  if (label != cell_label(a, r)) return std::nullopt;
  return CellLabel{a, r};
}

AdherenceReport adherence_score(const SampleBatch& samples, const std::vector<CellLabel>& intended,
                                const TaskSpec& task) {
  if (samples.n == 0) throw ConfigError("adherence needs at least one sample");
  if (intended.size() != samples.n) throw ConfigError("one intended cell per sample is required");
  if (samples.dim != 2) throw ShapeError("adherence expects 2-D samples");
  std::size_t text = 0, modal = 0, joint = 0;
  for (std::size_t i = 0; i < samples.n; ++i) {
    const CellLabel c = classify({samples.at(i, 0), samples.at(i, 1)}, task);
    const bool ta = c.angle == intended[i].angle, mr = c.radius == intended[i].radius;
    text += ta;
    modal += mr;
    joint += ta && mr;
  }
  const double n = static_cast<double>(samples.n);
  return {static_cast<double>(text) / n, static_cast<double>(modal) / n, static_cast<double>(joint) / n, samples.n};
}

void write_adherence_report(std::ostream& out, const AdherenceReport& r) {
  out << "text_acc=" << format_double(r.text_acc) << "\nmodal_acc=" << format_double(r.modal_acc)
      << "\njoint_acc=" << format_double(r.joint_acc) << "\nn=" << r.n << '\n';
}

ProbeSpec parse_probe_json(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("probe config is not valid JSON: ") + e.what());
  }
  JsonSection top(root, "probe");
  ProbeSpec p;
  if (top.has("targets")) {
    nlohmann::json wrapped = {{"targets", top.child("targets")}};
    p.targets = parse_targets_json(wrapped.dump());
  }
  if (top.has("timesteps")) {
    for (const auto& t : top.child("timesteps")) {
      if (!t.is_number_unsigned()) throw ConfigError("probe.timesteps must be non-negative integers");
      p.timesteps.push_back(t.get<std::size_t>());
    }
  }
  top.finish();
  return p;
}

namespace {

std::vector<GenerationTarget> default_targets(const CheckpointBundle& bundle) {
  std::set<std::string> mods;
  for (const auto& b : bundle.branches) mods.insert(b.params.modality);
  std::vector<GenerationTarget> out(1);
  for (const auto& m : mods) {
    std::vector<GenerationTarget> next;
    for (const auto& t : out) {
      for (std::size_t c = 0; c < modality_classes(bundle.config.task, m); ++c) {
        GenerationTarget g = t;
        g.modalities[m] = c;
        next.push_back(g);
      }
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace

std::vector<GateHeatmap> gate_heatmaps(const CheckpointBundle& bundle, const ProbeSpec& probe) {
  const auto& cfg = bundle.config;
  const ComposedModel model = ComposedModel::from_bundle(bundle);
  const std::size_t depth = cfg.connector.depth, K = cfg.connector.num_latents;
  std::vector<std::size_t> ts = probe.timesteps;
  if (ts.empty()) {
    const std::size_t T = cfg.diffusion.T_max;
    ts = {0, T / 4, T / 2, 3 * T / 4};
  }
  for (auto t : ts) {
    if (t >= cfg.diffusion.T_max) throw ConfigError("probe timestep " + std::to_string(t) + " is outside [0, T_max)");
  }
  const auto targets = probe.targets.empty() ? default_targets(bundle) : probe.targets;

  std::vector<GateHeatmap> maps;
  for (const auto& b : bundle.branches) maps.push_back({b.branch_id, Tensor::zeros({depth, K}), Tensor::zeros({depth, K})});
  if (maps.empty()) return maps;

  const Codebooks books = make_codebooks(cfg.task);
  std::size_t count = 0;
  for (const auto& target : targets) {
    const ConditionStream text = caption(cfg.task, books, target.text_angle, target.text_radius);
    std::vector<ConditionStream> streams;
    for (const auto& b : bundle.branches) {
      auto it = target.modalities.find(b.params.modality);
      if (it == target.modalities.end()) throw CapabilityError("probe target has no '" + b.params.modality + "' condition");
      if (it->second >= modality_classes(cfg.task, b.params.modality)) throw ConfigError("probe label out of range");
      streams.push_back(modality_stream(cfg.task, books, b.params.modality, it->second));
    }
    std::vector<const ConditionStream*> ptrs;
    for (const auto& s : streams) ptrs.push_back(&s);
    for (auto t : ts) {
      Tape tape;
      Binder bind(tape);
      const auto out = composed_forward(bind, model, &text, ptrs, time_embed(static_cast<int>(t), cfg.connector.d_time), true);
      for (std::size_t i = 0; i < maps.size(); ++i) {
        for (const auto& rec : out.gates[i]) {
          for (std::size_t k = 0; k < K; ++k) {
            maps[i].attn.at(rec.layer_index, k) += std::abs(rec.token_gates_attn[k]);
            maps[i].ffn.at(rec.layer_index, k) += std::abs(rec.token_gates_ffn[k]);
          }
        }
      }
      ++count;
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (auto& m : maps) {
    for (double& v : m.attn.data()) v *= inv;
    for (double& v : m.ffn.data()) v *= inv;
  }
  return maps;
}

void export_gate_heatmap(std::ostream& out, const GateHeatmap& h) {
  out << "layer,token,attn_gate,ffn_gate\n";
  for (std::size_t l = 0; l < h.attn.rows(); ++l) {
    for (std::size_t k = 0; k < h.attn.cols(); ++k) {
      out << l << ',' << k << ',' << format_double(h.attn.at(l, k)) << ',' << format_double(h.ffn.at(l, k)) << '\n';
    }
  }
}

GateHeatmap read_gate_heatmap(std::istream& in, const std::string& branch_id) {
  std::string line;
  if (!std::getline(in, line) || line != "layer,token,attn_gate,ffn_gate") throw ConfigError("unexpected heatmap header");
  struct Row {
    std::size_t l, k;
    double a, f;
  };
  std::vector<Row> rows;
  std::size_t depth = 0, K = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    Row r{};
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> r.l >> c1 >> r.k >> c2 >> r.a >> c3 >> r.f) || c1 != ',' || c2 != ',' || c3 != ',') {
      throw ConfigError("malformed heatmap row: " + line);
    }
    depth = std::max(depth, r.l + 1);
    K = std::max(K, r.k + 1);
    rows.push_back(r);
  }
  if (rows.size() != depth * K || rows.empty()) throw ConfigError("heatmap rows do not form a full grid");
  GateHeatmap h{branch_id, Tensor::zeros({depth, K}), Tensor::zeros({depth, K})};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].l != i / K || rows[i].k != i % K) throw ConfigError("heatmap rows are out of order");
    h.attn.at(rows[i].l, rows[i].k) = rows[i].a;
    h.ffn.at(rows[i].l, rows[i].k) = rows[i].f;
  }
  return h;
}

double gate_sparsity(const Tensor& heatmap, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("sparsity threshold q must lie in (0, 1)");
  if (heatmap.empty()) throw ConfigError("empty heatmap");
  double max = 0.0;
  for (double v : heatmap.values()) max = std::max(max, std::abs(v));
  if (max == 0.0) return 1.0;
  std::size_t below = 0;
  for (double v : heatmap.values()) below += std::abs(v) < q * max;
  return static_cast<double>(below) / static_cast<double>(heatmap.size());
}

std::set<std::size_t> top_quartile_tokens(const Tensor& heatmap) {
  if (heatmap.empty()) throw ConfigError("empty heatmap");
  const std::size_t depth = heatmap.rows(), K = heatmap.cols();
  std::vector<double> score(K, 0.0);
  for (std::size_t l = 0; l < depth; ++l)
    for (std::size_t k = 0; k < K; ++k) score[k] += std::abs(heatmap.at(l, k));
  std::vector<std::size_t> idx(K);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  const std::size_t n = (K + 3) / 4;
  return {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace emma
