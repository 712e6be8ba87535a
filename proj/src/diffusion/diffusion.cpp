// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/diffusion/diffusion.hpp"

#include <fmt/format.h>

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "emma/connector/connector.hpp"
#include "emma/error.hpp"
#include "emma/numerics/ops.hpp"

namespace emma {

void DiffusionConfig::validate() const {
  if (T_max < 10) throw ConfigError("diffusion.T_max must be at least 10");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
    throw ConfigError("diffusion betas must satisfy 0 < beta_start < beta_end < 1");
  }
  if (sample_dim < 1) throw ConfigError("diffusion.sample_dim must be positive");
  if (!std::isfinite(guidance_weight)) throw ConfigError("diffusion.guidance_weight must be finite");
  if (d_time < 2 || d_time % 2 != 0) throw ConfigError("diffusion.d_time must be even");
  if (hidden < 1 || attn_dim < 1) throw ConfigError("diffusion denoiser widths must be positive");
}

NoiseSchedule build_schedule(const DiffusionConfig& cfg) {
  if (cfg.T_max < 1) throw ConfigError("schedule needs at least one step");
  if (!(cfg.beta_start > 0.0 && cfg.beta_start <= cfg.beta_end && cfg.beta_end < 1.0)) {
    throw ConfigError("schedule betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  const std::size_t n = cfg.T_max;
  double bar = 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double frac = n == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(n - 1);
    const double beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * frac;
    bar *= 1.0 - beta;
    s.betas.push_back(beta);
    s.alphas.push_back(1.0 - beta);
    s.alpha_bars.push_back(bar);
  }
  return s;
}

namespace {

void check_t(std::size_t t, const NoiseSchedule& sched) {
  if (t >= sched.steps()) {
    throw ConfigError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(sched.steps()) + ")");
  }
}

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Var affine(Binder& bind, Var x, const Linear& l) {
  if (l.b) return ops::linear(x, bind(l.w), bind(*l.b));
  return ops::linear(x, bind(l.w));
}

template <class P, class F>
void visit(P& p, const F& f) {
  const auto lin = [&](auto& l, const std::string& name) {
    f("denoiser." + name + ".w", l.w);
    if (l.b) f("denoiser." + name + ".b", *l.b);
  };
  lin(p.in, "in");
  lin(p.time, "time");
  lin(p.query, "query");
  lin(p.key, "key");
  lin(p.value, "value");
  lin(p.read, "read");
  lin(p.mid, "mid");
  lin(p.mid2, "mid2");
  lin(p.out, "out");
}

}  // namespace

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& noise, const NoiseSchedule& sched) {
  check_t(t, sched);
  check_same(x0, noise, "q_sample");
  const double a = std::sqrt(sched.alpha_bars[t]);
  const double s = std::sqrt(1.0 - sched.alpha_bars[t]);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + s * noise[i];
  return out;
}

DenoiserParams init_denoiser(const DiffusionConfig& cfg, std::size_t d_model, Rng& rng) {
  cfg.validate();
  const auto h = cfg.hidden, a = cfg.attn_dim;
  return DenoiserParams{Linear::init(cfg.sample_dim, h, true, rng), Linear::init(cfg.d_time, h, false, rng),
                        Linear::init(h, a, false, rng),           Linear::init(d_model, a, false, rng),
                        Linear::init(d_model, a, false, rng),     Linear::init(a, h, false, rng),
                        Linear::init(h, h, true, rng),            Linear::init(h, h, true, rng),
                        Linear::init(h, cfg.sample_dim, true, rng)};
}

void for_each_param(DenoiserParams& p, const ParamVisitor& f) { visit(p, f); }
void for_each_param(const DenoiserParams& p, const ConstParamVisitor& f) { visit(p, f); }

Var denoiser_forward(Binder& bind, const DenoiserParams& p, const DiffusionConfig& cfg, Var x_t, std::size_t t,
                     Var tokens) {
  if (x_t.shape().size() != 2 || x_t.shape()[1] != cfg.sample_dim) {
    throw ShapeError("denoiser input must be B×" + std::to_string(cfg.sample_dim) + ", got " + shape_str(x_t.shape()));
  }
  Tape& tape = bind.tape();
  const Var te = tape.constant(time_embed(static_cast<int>(t), cfg.d_time).vector);
  const Var h0 = ops::silu(ops::add_row(affine(bind, x_t, p.in), affine(bind, te, p.time)));
  const Var q = ops::split_heads(affine(bind, h0, p.query), 1);
  const Var k = ops::split_heads(affine(bind, tokens, p.key), 1);
  const Var v = ops::split_heads(affine(bind, tokens, p.value), 1);
  const Var read = ops::merge_heads(ops::scaled_dot_attention(q, k, v));
  const Var h1 = ops::silu(ops::add(affine(bind, h0, p.mid), affine(bind, read, p.read)));
  const Var h2 = ops::add(h1, ops::silu(affine(bind, h1, p.mid2)));
  return affine(bind, h2, p.out);
}

Tensor predict_x0(const Tensor& x_t, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
  check_t(t, sched);
  check_same(x_t, eps, "predict_x0");
  const double a = std::sqrt(sched.alpha_bars[t]);
  const double s = std::sqrt(1.0 - sched.alpha_bars[t]);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - s * eps[i]) / a;
  return out;
}

Tensor denoise_step(const Tensor& x_t, std::size_t t, const Tensor& eps, const NoiseSchedule& sched, Rng* rng) {
  const Tensor x0 = predict_x0(x_t, t, eps, sched);
  const double bar = sched.alpha_bars[t];
  const double bar_prev = t == 0 ? 1.0 : sched.alpha_bars[t - 1];
  const double beta = sched.betas[t];
  const double c0 = std::sqrt(bar_prev) * beta / (1.0 - bar);
  const double ct = std::sqrt(sched.alphas[t]) * (1.0 - bar_prev) / (1.0 - bar);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = c0 * x0[i] + ct * x_t[i];
  if (t >= 1 && rng != nullptr) {
    const double sigma = std::sqrt((1.0 - bar_prev) / (1.0 - bar) * beta);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma * rng->normal();
  }
  if (!out.all_finite()) throw NumericError("denoise_step produced a non-finite value at t=" + std::to_string(t));
  return out;
}

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double w) {
  check_same(eps_uncond, eps_cond, "cfg_combine");
  if (w == 1.0) return eps_cond;
  if (w == 0.0) return eps_uncond;
  Tensor out(eps_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_uncond[i] + w * (eps_cond[i] - eps_uncond[i]);
  return out;
}

SampleBatch sample(const DenoiserParams& den, const DiffusionConfig& cfg, const NoiseSchedule& sched,
                   const TokenFn& cond, const TokenFn& uncond, const SampleOptions& opts, Rng& rng) {
  SampleBatch batch{opts.n, cfg.sample_dim, {}};
  if (opts.guidance != 1.0 && !uncond) {
    throw CapabilityError("guidance weight " + format_double(opts.guidance) + " needs a null-condition embedding");
  }
  if (opts.n == 0) return batch;
  Tensor x = rng.normal_tensor({opts.n, cfg.sample_dim});
  for (std::size_t step = sched.steps(); step-- > 0;) {
    Tape tape;
    Binder bind(tape);
    const Var xv = tape.constant(x);
    const Tensor eps_c = denoiser_forward(bind, den, cfg, xv, step, tape.constant(cond(step))).value();
    Tensor eps = eps_c;
    if (opts.guidance != 1.0) {
      const Tensor eps_u = denoiser_forward(bind, den, cfg, xv, step, tape.constant(uncond(step))).value();
      eps = cfg_combine(eps_u, eps_c, opts.guidance);
    }
    x = denoise_step(x, step, eps, sched, opts.deterministic ? nullptr : &rng);
  }
  batch.values = x.values();
  return batch;
}

std::string format_double(double v) { return fmt::format("{:.9g}", v); }

void write_samples_csv(std::ostream& out, const SampleBatch& batch, const std::vector<std::string>& labels) {
  if (labels.size() != batch.n) throw ShapeError("one condition label per sample is required");
  out << "sample_id";
  for (std::size_t j = 0; j < batch.dim; ++j) out << ",dim" << j;
  out << ",condition_label\n";
  for (std::size_t i = 0; i < batch.n; ++i) {
    out << i;
    for (std::size_t j = 0; j < batch.dim; ++j) out << ',' << format_double(batch.at(i, j));
    out << ',' << labels[i] << '\n';
  }
}

LabeledSamples read_samples_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("sample CSV is empty");
  std::size_t cols = 1;
  for (char c : line) cols += c == ',' ? 1 : 0;
  if (cols < 3 || line.rfind("sample_id,", 0) != 0) throw ConfigError("unexpected sample CSV header: " + line);
  LabeledSamples out;
  out.batch.dim = cols - 2;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    for (std::size_t j = 0; j < out.batch.dim; ++j) {
      if (!std::getline(ss, cell, ',')) throw ConfigError("short sample CSV row: " + line);
      out.batch.values.push_back(std::stod(cell));
    }
    std::getline(ss, cell);
    out.labels.push_back(cell);
    ++out.batch.n;
  }
  return out;
}

}  // namespace emma
