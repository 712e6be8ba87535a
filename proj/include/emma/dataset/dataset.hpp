// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "emma/connector/condition.hpp"
#include "emma/numerics/rng.hpp"

namespace emma {

inline constexpr const char* kAngleModality = "angle";
inline constexpr const char* kRadiusModality = "radius";
inline constexpr std::size_t kCaptionTokens = 4;

/// Synthetic 2-D task: cell (i, j) sits at angle 2πi/n_text on the ring of radius base + j·step.
struct TaskSpec {
  std::size_t n_text_classes = 4;   // angles, carried by the text-proxy stream
  std::size_t n_modal_classes = 3;  // radii, carried by the extra-modality stream
  std::size_t samples_per_cell = 256;
  double noise_sigma = 0.08;
  std::uint64_t seed = 1234;
  std::size_t text_dim = 16;
  std::size_t modal_dim = 8;
  std::size_t modal_tokens = 4;
  double radius_base = 0.6;
  double radius_step = 0.6;

  void validate() const;
  std::array<double, 2> cell_mean(std::size_t angle, std::size_t radius) const;
  std::size_t vocab_size() const { return n_text_classes + n_modal_classes + 4; }

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

/// Fixed random-orthogonal feature codes, a pure function of the task seed.
struct Codebooks {
  Tensor text;      // vocab × text_dim: angle words, radius words, any-angle, any-radius, two fillers
  Tensor angle;     // n_text × modal_dim
  Tensor radius;    // n_modal × modal_dim
  Tensor position;  // modal_tokens × modal_dim, added at 0.5 scale to modality tokens
};

Codebooks make_codebooks(const TaskSpec& spec);

// Orthonormal rows (Gram–Schmidt on Gaussian draws) rescaled to unit-variance entries.
Tensor random_orthogonal_codes(std::size_t count, std::size_t dim, Rng& rng);

/// Caption of kCaptionTokens words: filler, angle word (or "any angle"), radius word (or "any radius"), filler.
ConditionStream caption(const TaskSpec& spec, const Codebooks& books, std::optional<std::size_t> angle,
                        std::optional<std::size_t> radius);

// Extra-modality stream for `modality` ∈ {angle, radius}.
ConditionStream modality_stream(const TaskSpec& spec, const Codebooks& books, const std::string& modality,
                                std::size_t label);
std::size_t modality_classes(const TaskSpec& spec, const std::string& modality);

struct Sample {
  std::array<double, 2> x{};
  std::size_t text_label = 0;   // angle index
  std::size_t modal_label = 0;  // radius index
  ConditionStream text_tokens;  // caption naming the angle
  ConditionStream modal_tokens; // radius-modality stream
  std::optional<std::array<double, 2>> mask;
};

std::vector<Sample> gen_dataset(const TaskSpec& spec);

std::string cell_label(std::optional<std::size_t> angle, std::optional<std::size_t> radius);

/// One training row after the stage-specific choice of streams.
struct TrainExample {
  std::array<double, 2> x{};
  std::optional<ConditionStream> text;    // nullopt: learned null condition
  std::optional<ConditionStream> branch;  // extra-modality stream for the branch under training
  std::array<double, 2> weights{1.0, 1.0};
  bool dropped = false;
};

// Independently replaces both streams of each example with the null condition with probability p_drop.
void condition_dropout(std::vector<TrainExample>& batch, double p_drop, Rng& rng);

struct MaskSpec {
  std::array<double, 2> weights{1.0, 1.0};
};
Sample apply_object_mask(const Sample& sample, const MaskSpec& mask);

void write_dataset_csv(std::ostream& out, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset_csv(std::istream& in, const TaskSpec& spec);

std::string task_to_json(const TaskSpec& spec);
TaskSpec task_from_json(const std::string& text);

}  // namespace emma
