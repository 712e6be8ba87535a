// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/dataset/dataset.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "emma/diffusion/diffusion.hpp"
#include "emma/error.hpp"
#include "emma/util/json_fields.hpp"

namespace emma {

namespace {

// Substreams of the task seed.
constexpr std::uint64_t kCodeStream = 1;
constexpr std::uint64_t kPointStream = 2;

std::size_t word_any_angle(const TaskSpec& s) { return s.n_text_classes + s.n_modal_classes; }
std::size_t word_any_radius(const TaskSpec& s) { return word_any_angle(s) + 1; }
std::size_t word_filler(const TaskSpec& s, std::size_t k) { return word_any_angle(s) + 2 + k; }

}  // namespace

void TaskSpec::validate() const {
  if (n_text_classes < 2 || n_modal_classes < 2) throw ConfigError("task needs at least 2 classes per factor");
  if (samples_per_cell < 1) throw ConfigError("task.samples_per_cell must be positive");
  if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("task.noise_sigma must be positive");
  if (vocab_size() > text_dim) {
    throw ConfigError("task.text_dim must be at least " + std::to_string(vocab_size()) + " for orthogonal word codes");
  }
  if (std::max(n_text_classes, n_modal_classes) > modal_dim || modal_tokens > modal_dim) {
    throw ConfigError("task.modal_dim too small for orthogonal class and position codes");
  }
  if (modal_tokens < 1) throw ConfigError("task.modal_tokens must be positive");
  if (!(radius_base > 0.0) || !(radius_step > 0.0)) throw ConfigError("task radii must be positive");
}

std::array<double, 2> TaskSpec::cell_mean(std::size_t angle, std::size_t radius) const {
  if (angle >= n_text_classes || radius >= n_modal_classes) throw ConfigError("cell index out of range");
  const double theta = 2.0 * std::numbers::pi * static_cast<double>(angle) / static_cast<double>(n_text_classes);
  const double r = radius_base + radius_step * static_cast<double>(radius);
  return {r * std::cos(theta), r * std::sin(theta)};
}

Tensor random_orthogonal_codes(std::size_t count, std::size_t dim, Rng& rng) {
  if (count > dim) throw ConfigError("cannot draw " + std::to_string(count) + " orthogonal codes in " + std::to_string(dim) + " dims");
  Tensor out({count, dim});
  const double scale = std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> v(dim);
    double norm = 0.0;
    // Redraw in the (probability-zero) event of a degenerate residual.
    while (norm < 1e-6) {
      for (auto& e : v) e = rng.normal();
      for (std::size_t k = 0; k < i; ++k) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dim; ++j) dot += v[j] * out.at(k, j) / scale;
        for (std::size_t j = 0; j < dim; ++j) v[j] -= dot * out.at(k, j) / scale;
      }
      norm = 0.0;
      for (double e : v) norm += e * e;
      norm = std::sqrt(norm);
    }
    for (std::size_t j = 0; j < dim; ++j) out.at(i, j) = v[j] / norm * scale;
  }
  return out;
}

Codebooks make_codebooks(const TaskSpec& spec) {
  spec.validate();
  Rng rng = Rng(spec.seed).fork(kCodeStream);
  Codebooks b;
  b.text = random_orthogonal_codes(spec.vocab_size(), spec.text_dim, rng);
  b.angle = random_orthogonal_codes(spec.n_text_classes, spec.modal_dim, rng);
  b.radius = random_orthogonal_codes(spec.n_modal_classes, spec.modal_dim, rng);
  b.position = random_orthogonal_codes(spec.modal_tokens, spec.modal_dim, rng);
  return b;
}

ConditionStream caption(const TaskSpec& spec, const Codebooks& books, std::optional<std::size_t> angle,
                        std::optional<std::size_t> radius) {
  if (angle && *angle >= spec.n_text_classes) throw ConfigError("angle label out of range");
  if (radius && *radius >= spec.n_modal_classes) throw ConfigError("radius label out of range");
  const std::size_t words[kCaptionTokens] = {word_filler(spec, 0), angle ? *angle : word_any_angle(spec),
                                             radius ? spec.n_text_classes + *radius : word_any_radius(spec),
                                             word_filler(spec, 1)};
  Tensor t({kCaptionTokens, spec.text_dim});
  for (std::size_t p = 0; p < kCaptionTokens; ++p)
    for (std::size_t j = 0; j < spec.text_dim; ++j) t.at(p, j) = books.text.at(words[p], j);
  return ConditionStream::text(std::move(t));
}

std::size_t modality_classes(const TaskSpec& spec, const std::string& modality) {
  if (modality == kAngleModality) return spec.n_text_classes;
  if (modality == kRadiusModality) return spec.n_modal_classes;
  throw CapabilityError("task has no modality '" + modality + "'");
}

ConditionStream modality_stream(const TaskSpec& spec, const Codebooks& books, const std::string& modality,
                                std::size_t label) {
  if (label >= modality_classes(spec, modality)) throw ConfigError(modality + " label out of range");
  const Tensor& codes = modality == kAngleModality ? books.angle : books.radius;
  Tensor t({spec.modal_tokens, spec.modal_dim});
  for (std::size_t p = 0; p < spec.modal_tokens; ++p)
    for (std::size_t j = 0; j < spec.modal_dim; ++j) t.at(p, j) = codes.at(label, j) + 0.5 * books.position.at(p, j);
  return ConditionStream::extra(modality, std::move(t));
}

namespace {

Sample make_sample(const TaskSpec& spec, const Codebooks& books, std::array<double, 2> x, std::size_t a,
                   std::size_t r) {
  return Sample{x, a, r, caption(spec, books, a, std::nullopt), modality_stream(spec, books, kRadiusModality, r),
                std::nullopt};
}

}  // namespace

std::vector<Sample> gen_dataset(const TaskSpec& spec) {
  const Codebooks books = make_codebooks(spec);
  Rng rng = Rng(spec.seed).fork(kPointStream);
  std::vector<Sample> out;
  out.reserve(spec.n_text_classes * spec.n_modal_classes * spec.samples_per_cell);
  for (std::size_t a = 0; a < spec.n_text_classes; ++a)
    for (std::size_t r = 0; r < spec.n_modal_classes; ++r) {
      const auto mean = spec.cell_mean(a, r);
      for (std::size_t k = 0; k < spec.samples_per_cell; ++k) {
        const double dx = spec.noise_sigma * rng.normal();
        const double dy = spec.noise_sigma * rng.normal();
        out.push_back(make_sample(spec, books, {mean[0] + dx, mean[1] + dy}, a, r));
      }
    }
  return out;
}

std::string cell_label(std::optional<std::size_t> angle, std::optional<std::size_t> radius) {
  return "a" + (angle ? std::to_string(*angle) : std::string("*")) + "-r" +
         (radius ? std::to_string(*radius) : std::string("*"));
}

void condition_dropout(std::vector<TrainExample>& batch, double p_drop, Rng& rng) {
  if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ConfigError("condition dropout must lie in [0, 1)");
  if (p_drop == 0.0) return;
  for (auto& ex : batch) {
    if (rng.bernoulli(p_drop)) {
      ex.text.reset();
      ex.branch.reset();
      ex.dropped = true;
    }
  }
}

Sample apply_object_mask(const Sample& sample, const MaskSpec& mask) {
  for (double w : mask.weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("mask weights must be finite and non-negative");
  }
  Sample out = sample;
  out.mask = mask.weights;
  return out;
}

void write_dataset_csv(std::ostream& out, const std::vector<Sample>& samples) {
  SampleBatch batch{samples.size(), 2, {}};
  std::vector<std::string> labels;
  for (const auto& s : samples) {
    batch.values.push_back(s.x[0]);
    batch.values.push_back(s.x[1]);
    labels.push_back(cell_label(s.text_label, s.modal_label));
  }
  write_samples_csv(out, batch, labels);
}

std::vector<Sample> read_dataset_csv(std::istream& in, const TaskSpec& spec) {
  const Codebooks books = make_codebooks(spec);
  const auto rows = read_samples_csv(in);
  if (rows.batch.dim != 2) throw ConfigError("dataset CSV must have two coordinates");
  std::vector<Sample> out;
  for (std::size_t i = 0; i < rows.batch.n; ++i) {
    std::size_t a = 0, r = 0;
    char tail = 0;
    if (std::sscanf(rows.labels[i].c_str(), "a%zu-r%zu%c", &a, &r, &tail) != 2) {
      throw ConfigError("bad cell label '" + rows.labels[i] + "'");
    }
    if (a >= spec.n_text_classes || r >= spec.n_modal_classes) throw ConfigError("cell label out of range");
    out.push_back(make_sample(spec, books, {rows.batch.at(i, 0), rows.batch.at(i, 1)}, a, r));
  }
  return out;
}

std::string task_to_json(const TaskSpec& s) {
  nlohmann::ordered_json j;
  j["n_text_classes"] = s.n_text_classes;
  j["n_modal_classes"] = s.n_modal_classes;
  j["samples_per_cell"] = s.samples_per_cell;
  j["noise_sigma"] = s.noise_sigma;
  j["seed"] = s.seed;
  j["text_dim"] = s.text_dim;
  j["modal_dim"] = s.modal_dim;
  j["modal_tokens"] = s.modal_tokens;
  j["radius_base"] = s.radius_base;
  j["radius_step"] = s.radius_step;
  return j.dump(2);
}

TaskSpec task_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task spec is not valid JSON: ") + e.what());
  }
  TaskSpec s;
  JsonSection sec(j, "task");
  sec.read("n_text_classes", s.n_text_classes);
  sec.read("n_modal_classes", s.n_modal_classes);
  sec.read("samples_per_cell", s.samples_per_cell);
  sec.read("noise_sigma", s.noise_sigma);
  sec.read("seed", s.seed);
  sec.read("text_dim", s.text_dim);
  sec.read("modal_dim", s.modal_dim);
  sec.read("modal_tokens", s.modal_tokens);
  sec.read("radius_base", s.radius_base);
  sec.read("radius_step", s.radius_step);
  sec.finish();
  s.validate();
  return s;
}

}  // namespace emma
