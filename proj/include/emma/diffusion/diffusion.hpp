// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "emma/connector/params.hpp"
#include "emma/numerics/rng.hpp"
#include "emma/numerics/tape.hpp"

namespace emma {

struct DiffusionConfig {
  std::size_t T_max = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::size_t sample_dim = 2;
  double guidance_weight = 1.0;
  std::size_t d_time = 16;     // denoiser time-embedding width
  std::size_t hidden = 64;     // denoiser MLP width
  std::size_t attn_dim = 32;   // width of the single cross-attention read

  void validate() const;
  friend bool operator==(const DiffusionConfig&, const DiffusionConfig&) = default;
};

struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  std::size_t steps() const { return betas.size(); }
};

NoiseSchedule build_schedule(const DiffusionConfig& cfg);

// √ᾱ_t·x0 + √(1−ᾱ_t)·noise
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& noise, const NoiseSchedule& sched);

struct DenoiserParams {
  Linear in;      // sample_dim → hidden
  Linear time;    // d_time → hidden, no bias
  Linear query;   // hidden → attn_dim, no bias
  Linear key;     // d_model → attn_dim, no bias
  Linear value;   // d_model → attn_dim, no bias
  Linear read;    // attn_dim → hidden, no bias
  Linear mid;     // hidden → hidden
  Linear mid2;    // hidden → hidden
  Linear out;     // hidden → sample_dim
};

DenoiserParams init_denoiser(const DiffusionConfig& cfg, std::size_t d_model, Rng& rng);
void for_each_param(DenoiserParams& p, const ParamVisitor& f);
void for_each_param(const DenoiserParams& p, const ConstParamVisitor& f);

/// Predicts ε̂ for a batch x_t [B×sample_dim] that shares one timestep and one
/// set of connector tokens [K×d_model].
Var denoiser_forward(Binder& bind, const DenoiserParams& p, const DiffusionConfig& cfg, Var x_t, std::size_t t,
                     Var tokens);

// x̂0 = (x_t − √(1−ᾱ_t)·ε̂) / √ᾱ_t
Tensor predict_x0(const Tensor& x_t, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);

/// One ancestral step from x_t to x_{t−1} using the posterior q(x_{t−1} | x_t, x̂0).
/// Noise is only added for t ≥ 1 and only when `rng` is non-null (null selects the variance-0 variant).
Tensor denoise_step(const Tensor& x_t, std::size_t t, const Tensor& eps, const NoiseSchedule& sched, Rng* rng);

// eps_uncond + w·(eps_cond − eps_uncond); w = 1 and w = 0 return the corresponding input exactly.
Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double w);

// Connector tokens for one condition group at timestep t.
using TokenFn = std::function<Tensor(std::size_t t)>;

/// Row-major batch of generated points; `n` may be 0.
struct SampleBatch {
  std::size_t n = 0;
  std::size_t dim = 2;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * dim + j]; }
};

struct SampleOptions {
  std::size_t n = 0;
  double guidance = 1.0;
  bool deterministic = false;
};

/// Runs the full reverse chain. The connector is re-evaluated at every timestep through `cond`
/// and `uncond`; `uncond` may be empty only when guidance == 1.
SampleBatch sample(const DenoiserParams& den, const DiffusionConfig& cfg, const NoiseSchedule& sched,
                   const TokenFn& cond, const TokenFn& uncond, const SampleOptions& opts, Rng& rng);

void write_samples_csv(std::ostream& out, const SampleBatch& batch, const std::vector<std::string>& labels);
std::string format_double(double v);

struct LabeledSamples {
  SampleBatch batch;
  std::vector<std::string> labels;
};
LabeledSamples read_samples_csv(std::istream& in);

}  // namespace emma
