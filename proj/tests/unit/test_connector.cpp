// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "emma/connector/connector.hpp"
#include "emma/connector/gradcheck_setup.hpp"
#include "emma/error.hpp"
#include "emma/numerics/grad_check.hpp"
#include "emma/numerics/ops.hpp"
#include "test_support.hpp"

using namespace emma;
using emma::testing::bit_equal;
using emma::testing::randomize;
using emma::testing::refs;

namespace {

ConnectorConfig small_config(std::size_t k = 4, std::size_t d = 16, std::size_t depth = 2) {
  ConnectorConfig cfg;
  cfg.num_latents = k;
  cfg.d_model = d;
  cfg.n_heads = 2;
  cfg.d_time = 4;
  cfg.depth = depth;
  cfg.text_dim = 3;
  cfg.text_tokens = 3;
  cfg.modality_dims = {{"style", 5}};
  return cfg;
}

// Plain-loop helpers used to build oracles independently of ops.cpp.
Tensor mm(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t p = 0; p < a.cols(); ++p) c.at(i, j) += a.at(i, p) * b.at(p, j);
  return c;
}

Tensor affine(const Tensor& x, const Linear& l) {
  Tensor y = mm(x, l.w);
  if (l.b)
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) y.at(i, j) += (*l.b)[j];
  return y;
}

Tensor adaln_oracle(const Tensor& x, const Tensor& te, const AdaLNParams& p) {
  Tensor h = affine(te, p.hidden);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = h[i] / (1.0 + std::exp(-h[i]));
  const Tensor sc = affine(h, p.scale), sh = affine(h, p.shift);
  Tensor y(x.shape());
  const std::size_t d = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += x.at(r, c) / static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) var += (x.at(r, c) - mu) * (x.at(r, c) - mu) / static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c)
      y.at(r, c) = (x.at(r, c) - mu) / std::sqrt(var + kLayerNormEps) * (1.0 + sc[c]) + sh[c];
  }
  return y;
}

// Multi-head attention written with explicit loops over heads, queries and keys.
Tensor attend_oracle(const Tensor& x, const Tensor& kv, const AttnParams& p, std::size_t heads) {
  const Tensor q = affine(x, p.q), k = affine(kv, p.k), v = affine(kv, p.v);
  const std::size_t d = q.cols(), dh = d / heads;
  Tensor out({q.rows(), d});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < q.rows(); ++i) {
      std::vector<double> s(k.rows());
      for (std::size_t j = 0; j < k.rows(); ++j) {
        for (std::size_t c = 0; c < dh; ++c) s[j] += q.at(i, h * dh + c) * k.at(j, h * dh + c);
        s[j] /= std::sqrt(static_cast<double>(dh));
      }
      const double m = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - m));
      for (std::size_t j = 0; j < k.rows(); ++j)
        for (std::size_t c = 0; c < dh; ++c) out.at(i, h * dh + c) += s[j] / z * v.at(j, h * dh + c);
    }
  return out;
}

struct Fixture {
  ConnectorConfig cfg;
  ConnectorParams base;
  BranchParams branch;
  ConditionStream text;
  ConditionStream cond;

  explicit Fixture(ConnectorConfig c, std::uint64_t seed = 5) : cfg(std::move(c)) {
    Rng rng(seed);
    base = init_connector(cfg, rng);
    branch = init_branch(cfg, "style", rng);
    randomize(base, rng);
    randomize(branch, rng);
    text = ConditionStream::text(rng.normal_tensor({cfg.text_tokens, cfg.text_dim}));
    cond = ConditionStream::extra("style", rng.normal_tensor({2, 5}));
  }

  void zero_gates() {
    for (auto& level : branch.levels) {
      level.gate.attn_global[0] = 0.0;
      level.gate.ffn_global[0] = 0.0;
    }
  }

  Tensor forward(bool with_branch, int t = 3, std::vector<GateRecord>* gates = nullptr) {
    Tape tape;
    Binder bind(tape);
    const BranchInput in{&branch, &cond};
    std::span<const BranchInput> branches;
    if (with_branch) branches = std::span<const BranchInput>(&in, 1);
    auto out = connector_forward(bind, cfg, base, &text, branches, time_embed(t, cfg.d_time), gates != nullptr);
    if (gates) *gates = out.gates;
    return out.tokens.value();
  }
};

Tensor pr_only_forward(const Fixture& f, int t) {
  Tape tape;
  Binder bind(tape);
  Var te = tape.constant(time_embed(t, f.cfg.d_time).vector);
  Var l = bind(f.base.latents);
  for (std::size_t i = 0; i < f.cfg.depth; ++i) l = pr_block(bind, f.cfg, f.base, i, l, f.text, te);
  return l.value();
}

}  // namespace

TEST_CASE("time_embed") {
  const auto e0 = time_embed(0, 8);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(e0.vector[2 * i] == 0.0);
    CHECK(e0.vector[2 * i + 1] == 1.0);
  }
  const auto e1 = time_embed(1, 8);
  CHECK(e1.vector[0] != e0.vector[0]);
  CHECK(e1.vector[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(e1.vector[2] == doctest::Approx(std::sin(std::pow(10000.0, -0.25))).epsilon(1e-15));
  CHECK(bit_equal(time_embed(7, 8).vector, time_embed(7, 8).vector));
  CHECK_THROWS_AS(time_embed(1, 7), ConfigError);
  CHECK_THROWS_AS(time_embed(-1, 8), ConfigError);
}

TEST_CASE("adaln") {
  Rng rng(3);
  ConnectorConfig cfg = small_config(4, 8);
  auto params = init_connector(cfg, rng);
  AdaLNParams p = params.pr[0].attn.norm;
  Tensor x = rng.normal_tensor({4, 8});
  Tensor te = time_embed(5, cfg.d_time).vector;

  SUBCASE("zero-initialized maps reduce to layer_norm") {
    Tape tape;
    Binder bind(tape);
    Var y = adaln(bind, tape.constant(x), tape.constant(te), p);
    CHECK(bit_equal(y.value(), ops::layer_norm(tape.constant(x), kLayerNormEps).value()));
  }
  SUBCASE("constant shift") {
    for (std::size_t j = 0; j < 8; ++j) (*p.shift.b)[j] = 0.75;
    Tape tape;
    Binder bind(tape);
    Var y = adaln(bind, tape.constant(x), tape.constant(te), p);
    Var ln = ops::layer_norm(tape.constant(x), kLayerNormEps);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == ln.value()[i] + 0.75);
  }
  SUBCASE("matches explicit oracle and finite differences") {
    for (Tensor* t : {&p.hidden.w, &*p.hidden.b, &p.scale.w, &*p.scale.b, &p.shift.w, &*p.shift.b})
      emma::testing::fill_normal(*t, rng, 0.5);
    {
      Tape tape;
      Binder bind(tape);
      Var y = adaln(bind, tape.constant(x), tape.constant(te), p);
      CHECK(max_abs_diff(y.value(), adaln_oracle(x, te, p)) < 1e-12);
    }
    Tensor probe = rng.normal_tensor({4, 8});
    std::vector<ParamRef> ps = {{"x", &x}, {"hidden.w", &p.hidden.w}, {"scale.w", &p.scale.w}, {"shift.b", &*p.shift.b}};
    auto report = grad_check(
        [&](Binder& b) {
          Var y = adaln(b, b(x), b.tape().constant(te), p);
          return ops::sum(ops::mul(y, b.tape().constant(probe)));
        },
        ps, 1e-5);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("time_aware_attn") {
  Rng rng(8);
  ConnectorConfig cfg = small_config(2, 8);
  cfg.n_heads = 2;
  auto params = init_connector(cfg, rng);
  randomize(params, rng, 0.4);
  AttnParams& p = params.pr[0].attn;
  Tensor l = rng.normal_tensor({2, 8});
  Tensor te = time_embed(2, cfg.d_time).vector;

  SUBCASE("single key returns its value row") {
    Tensor kv = rng.normal_tensor({1, 8});
    Tape tape;
    Binder bind(tape);
    Var a = attend(bind, tape.constant(l), tape.constant(kv), tape.constant(te), p, cfg.n_heads);
    const Tensor v = mm(kv, p.v.w);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 8; ++j) CHECK(a.value().at(i, j) == doctest::Approx(v.at(0, j)).epsilon(1e-14));
  }
  SUBCASE("zero output projection gives zeros") {
    p.out = Linear::zeros(8, 8, true);
    Tape tape;
    Binder bind(tape);
    Var a = time_aware_attn(bind, tape.constant(l), tape.constant(rng.normal_tensor({3, 8})), tape.constant(te), p, 2);
    CHECK(a.value() == Tensor::zeros({2, 8}));
  }
  SUBCASE("two heads match the loop oracle") {
    Tensor kv = rng.normal_tensor({3, 8});
    Tape tape;
    Binder bind(tape);
    Var a = time_aware_attn(bind, tape.constant(l), tape.constant(kv), tape.constant(te), p, 2);
    const Tensor x = adaln_oracle(l, te, p.norm);
    CHECK(max_abs_diff(a.value(), affine(attend_oracle(x, kv, p, 2), p.out)) < 1e-12);
  }
  SUBCASE("aligned key/value permutation leaves the output unchanged") {
    Tensor kv = rng.normal_tensor({5, 8});
    Tensor perm({5, 8});
    const std::size_t order[5] = {3, 0, 4, 1, 2};
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 8; ++j) perm.at(i, j) = kv.at(order[i], j);
    Tape tape;
    Binder bind(tape);
    Var a = time_aware_attn(bind, tape.constant(l), tape.constant(kv), tape.constant(te), p, 2);
    Var b = time_aware_attn(bind, tape.constant(l), tape.constant(perm), tape.constant(te), p, 2);
    CHECK(max_abs_diff(a.value(), b.value()) < 1e-13);
  }
}

TEST_CASE("time_aware_ffn") {
  Rng rng(9);
  for (std::size_t k : {1u, 4u, 16u}) {
    ConnectorConfig cfg = small_config(k, 8);
    auto params = init_connector(cfg, rng);
    Tape tape;
    Binder bind(tape);
    Var y = time_aware_ffn(bind, tape.constant(rng.normal_tensor({k, 8})), tape.constant(time_embed(1, 4).vector),
                           params.pr[0].ffn);
    CHECK(y.shape() == Shape{k, 8});
    CHECK(y.value() == Tensor::zeros({k, 8}));
  }
  ConnectorConfig cfg = small_config(2, 8);
  auto params = init_connector(cfg, rng);
  randomize(params, rng, 0.4);
  FFNParams& p = params.pr[1].ffn;
  Tensor l = rng.normal_tensor({2, 8});
  Tensor te = time_embed(4, 4).vector;
  std::vector<ParamRef> ps = {{"L", &l},           {"up.w", &p.up.w},           {"down.w", &p.down.w},
                              {"down.b", &*p.down.b}, {"norm.scale.w", &p.norm.scale.w}};
  auto report = grad_check(
      [&](Binder& b) { return ops::sum(ops::gelu(time_aware_ffn(b, b(l), b.tape().constant(te), p))); }, ps, 1e-5);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("pr_block") {
  Rng rng(10);
  ConnectorConfig cfg = small_config();
  auto params = init_connector(cfg, rng);
  auto text = ConditionStream::text(rng.normal_tensor({3, 3}));
  Tensor l = rng.normal_tensor({4, 16});
  Tensor te = time_embed(6, 4).vector;

  {
    Tape tape;
    Binder bind(tape);
    Var y = pr_block(bind, cfg, params, 0, tape.constant(l), text, tape.constant(te));
    CHECK(bit_equal(y.value(), l));
  }
  randomize(params, rng);
  {
    Tape tape;
    Binder bind(tape);
    Var y = pr_block(bind, cfg, params, 0, tape.constant(l), text, tape.constant(te));
    CHECK(max_abs_diff(y.value(), l) > 0.0);
  }
  std::vector<ParamRef> ps = {{"T", &text.tokens}};
  auto report = grad_check(
      [&](Binder& b) {
        return ops::sum(ops::gelu(pr_block(b, cfg, params, 0, b.tape().constant(l), text, b.tape().constant(te))));
      },
      ps, 1e-5);
  CHECK(report.max_rel_err < 1e-4);

  auto wrong = ConditionStream::extra("style", rng.normal_tensor({2, 3}));
  Tape tape;
  Binder bind(tape);
  CHECK_THROWS_AS(pr_block(bind, cfg, params, 0, tape.constant(l), wrong, tape.constant(te)), CapabilityError);
}

TEST_CASE("agpr_block identities") {
  Fixture f(small_config());
  Rng rng(12);
  Tensor l = rng.normal_tensor({4, 16});
  Tensor te = time_embed(9, 4).vector;
  auto run = [&](const BranchParams& br) {
    Tape tape;
    Binder bind(tape);
    auto out = agpr_block(bind, f.cfg, br, 0, tape.constant(l), f.cond, tape.constant(te));
    return std::make_pair(out.latents.value(), make_gate_record(0, out));
  };

  SUBCASE("A = F = 0") {
    f.zero_gates();
    auto [y, rec] = run(f.branch);
    CHECK(bit_equal(y, l));
    CHECK(rec.token_gates_attn == Tensor::zeros({4}));
    CHECK(rec.token_gates_ffn == Tensor::zeros({4}));
  }
  SUBCASE("lambda = 0") {
    for (auto& level : f.branch.levels) level.gate.lambda_scale = 0.0;
    CHECK(bit_equal(run(f.branch).first, l));
  }
  SUBCASE("rescaling lambda against A and F") {
    const auto [y0, r0] = run(f.branch);
    CHECK(max_abs_diff(y0, l) > 0.0);
    BranchParams other = f.branch;
    for (auto& level : other.levels) {
      level.gate.lambda_scale *= 2.0;
      level.gate.attn_global[0] *= 0.5;
      level.gate.ffn_global[0] *= 0.5;
    }
    const auto [y1, r1] = run(other);
    CHECK(bit_equal(y0, y1));
    CHECK(bit_equal(r0.token_gates_attn, r1.token_gates_attn));
  }
  SUBCASE("shared scalar gate is uniform over tokens") {
    for (auto& level : f.branch.levels) {
      level.gate.attn_proj.reset();
      level.gate.ffn_proj.reset();
    }
    auto [y, rec] = run(f.branch);
    const double a = f.branch.levels[0].gate.lambda_scale * f.branch.levels[0].gate.attn_global[0];
    for (std::size_t i = 0; i < 4; ++i) CHECK(rec.token_gates_attn[i] == a);
  }
  SUBCASE("modality errors") {
    Tape tape;
    Binder bind(tape);
    auto other = ConditionStream::extra("depth", rng.normal_tensor({2, 5}));
    CHECK_THROWS_AS(agpr_block(bind, f.cfg, f.branch, 0, tape.constant(l), other, tape.constant(te)),
                    CapabilityError);
    CHECK_THROWS_AS(agpr_block(bind, f.cfg, f.branch, 0, tape.constant(l), f.text, tape.constant(te)),
                    CapabilityError);
    CHECK_THROWS_AS(init_branch(f.cfg, "depth", rng), CapabilityError);
  }
}

TEST_CASE("connector_forward") {
  Fixture f(small_config());

  SUBCASE("empty branches equal the PR-only stack") { CHECK(bit_equal(f.forward(false, 3), pr_only_forward(f, 3))); }

  SUBCASE("gate-zero identity") {
    f.zero_gates();
    CHECK(bit_equal(f.forward(true, 11), f.forward(false, 11)));
  }

  SUBCASE("gate records") {
    std::vector<GateRecord> gates;
    f.forward(true, 2, &gates);
    REQUIRE(gates.size() == f.cfg.depth);
    for (std::size_t i = 0; i < gates.size(); ++i) {
      CHECK(gates[i].layer_index == i);
      CHECK(gates[i].token_gates_attn.size() == f.cfg.num_latents);
      CHECK(gates[i].token_gates_ffn.size() == f.cfg.num_latents);
    }
    f.forward(false, 2, &gates);
    CHECK(gates.empty());
  }

  SUBCASE("errors") {
    Tape tape;
    Binder bind(tape);
    ConnectorConfig deeper = f.cfg;
    deeper.depth = 3;
    CHECK_THROWS_AS(connector_forward(bind, deeper, f.base, &f.text, {}, time_embed(0, 4), false), ShapeError);
    ConnectorParams no_null = f.base;
    no_null.text_null.reset();
    CHECK_THROWS_AS(connector_forward(bind, f.cfg, no_null, nullptr, {}, time_embed(0, 4), false), CapabilityError);
    const BranchInput two[2] = {{&f.branch, &f.cond}, {&f.branch, &f.cond}};
    CHECK_THROWS_AS(connector_forward(bind, f.cfg, f.base, &f.text, two, time_embed(0, 4), false), CompositionError);
  }
}

TEST_CASE("init identity") {
  ConnectorConfig cfg = small_config();
  Rng rng(21);
  auto base = init_connector(cfg, rng);
  auto branch = init_branch(cfg, "style", rng);
  auto text = ConditionStream::text(rng.normal_tensor({3, 3}));
  auto cond = ConditionStream::extra("style", rng.normal_tensor({2, 5}));
  const BranchInput in{&branch, &cond};
  for (int t : {0, 17, 99}) {
    Tape tape;
    Binder bind(tape);
    auto out = connector_forward(bind, cfg, base, &text, std::span<const BranchInput>(&in, 1), time_embed(t, 4), true);
    CHECK(bit_equal(out.tokens.value(), base.latents));
    for (const auto& g : out.gates) CHECK(g.token_gates_attn == Tensor::zeros({4}));
  }
}

TEST_CASE("gate-zero identity over random inputs") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Fixture f(small_config(), seed + 100);
    f.zero_gates();
    CHECK(bit_equal(f.forward(true, static_cast<int>(seed * 5)), f.forward(false, static_cast<int>(seed * 5))));
  }
}

TEST_CASE("end-to-end gradient") {
  for (auto c : {small_config(4, 16, 2), small_config(2, 8, 1)}) {
    const auto report = connector_grad_check(c, "style", 41, 1e-5);
    INFO(report.worst_param, " ", report.worst_index, " a=", report.worst_analytic, " n=", report.worst_numeric);
    CHECK(report.max_rel_err < 1e-4);
    CHECK(report.coordinates > 1000);
  }
}
