// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "emma/error.hpp"
#include "emma/numerics/grad_check.hpp"
#include "emma/numerics/ops.hpp"
#include "emma/numerics/rng.hpp"

using namespace emma;

namespace {

// Element-wise triple loop; independent of the blocked kernel in ops.cpp.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a.at(i, p) * b.at(p, j);
      c.at(i, j) = s;
    }
  return c;
}

}  // namespace

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK_FALSE(t.has_grad());
  t.mutable_grad()[1] = 2.0;
  CHECK(t.grad()[1] == 2.0);
  CHECK_THROWS_AS((void)t.reshaped({4}), ShapeError);
}

TEST_CASE("matmul") {
  Tape tape;
  auto id = tape.constant(Tensor::identity(2));
  auto m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(ops::matmul(id, m).value() == Tensor::matrix({{1, 2}, {3, 4}}));

  auto proj = tape.constant(Tensor::matrix({{1, 0}, {0, 0}}));
  auto b = tape.constant(Tensor::matrix({{5, 6}, {7, 8}}));
  CHECK(ops::matmul(proj, b).value() == Tensor::matrix({{5, 6}, {0, 0}}));

  Rng rng(11);
  Tensor a34 = rng.normal_tensor({3, 4});
  Tensor b42 = rng.normal_tensor({4, 2});
  auto prod = ops::matmul(tape.constant(a34), tape.constant(b42));
  CHECK(max_abs_diff(prod.value(), matmul_oracle(a34, b42)) < 1e-12);

  CHECK_THROWS_AS(ops::matmul(tape.constant(a34), tape.constant(a34)), ShapeError);
}

TEST_CASE("softmax") {
  Tape tape;
  auto a = ops::softmax(tape.constant(Tensor::row({0.0, 0.0})), 1).value();
  CHECK(a[0] == 0.5);
  CHECK(a[1] == 0.5);
  auto b = ops::softmax(tape.constant(Tensor::row({1000.0, 1000.0})), 1).value();
  CHECK(b[0] == 0.5);
  CHECK(b[1] == 0.5);
  auto c = ops::softmax(tape.constant(Tensor::row({std::log(2.0), 0.0})), 1).value();
  CHECK(c[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(c[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(ops::softmax(tape.constant(Tensor::row({1.0})), 2), ShapeError);

  SUBCASE("rows sum to one and lie in (0, 1]") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t rows = 1 + rng.uniform_int(4), cols = 1 + rng.uniform_int(7);
      Tensor x = rng.normal_tensor({rows, cols}, 1.0 + 20.0 * rng.uniform());
      for (std::size_t axis : {0u, 1u}) {
        auto y = ops::softmax(tape.constant(x), axis).value();
        const std::size_t n = axis == 1 ? cols : rows, other = axis == 1 ? rows : cols;
        for (std::size_t o = 0; o < other; ++o) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double v = axis == 1 ? y.at(o, j) : y.at(j, o);
            CHECK(v > 0.0);
            CHECK(v <= 1.0);
            s += v;
          }
          CHECK(std::abs(s - 1.0) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("layer_norm") {
  Tape tape;
  auto c = ops::layer_norm(tape.constant(Tensor::row({2.5, 2.5, 2.5})), 1e-6).value();
  for (double v : c.data()) CHECK(v == 0.0);
  auto pm = ops::layer_norm(tape.constant(Tensor::row({1.0, -1.0})), 0.0).value();
  CHECK(pm[0] == 1.0);
  CHECK(pm[1] == -1.0);
  CHECK_THROWS_AS(ops::layer_norm(tape.constant(Tensor::row({1.0})), 1e-6), ShapeError);

  Rng rng(3);
  Tensor x = rng.normal_tensor({1, 9}, 3.0);
  const double eps = 1e-5;
  double mu = 0.0;
  for (double v : x.data()) mu += v;
  mu /= 9.0;
  double var = 0.0;
  for (double v : x.data()) var += (v - mu) * (v - mu);
  var /= 9.0;
  Tensor expect({1, 9});
  for (std::size_t j = 0; j < 9; ++j) expect[j] = (x[j] - mu) / std::sqrt(var + eps);
  CHECK(max_abs_diff(ops::layer_norm(tape.constant(x), eps).value(), expect) < 1e-12);

  SUBCASE("normalized rows have zero mean and unit variance") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t d = 2 + rng.uniform_int(15);
      Tensor r = rng.normal_tensor({3, d}, 0.01 + 5.0 * rng.uniform());
      auto y = ops::layer_norm(tape.constant(r), 1e-15).value();
      for (std::size_t i = 0; i < 3; ++i) {
        double m = 0.0, v = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += y.at(i, j);
        m /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m);
        v /= static_cast<double>(d);
        CHECK(std::abs(m) < 1e-10);
        CHECK(std::abs(v - 1.0) < 1e-8);
      }
    }
  }
}

TEST_CASE("scaled_dot_attention") {
  Tape tape;
  Rng rng(17);

  SUBCASE("single key returns its value for every query") {
    Tensor q = rng.normal_tensor({2, 3, 4});
    Tensor k = rng.normal_tensor({2, 1, 4});
    Tensor v = rng.normal_tensor({2, 1, 4});
    auto o = ops::scaled_dot_attention(tape.constant(q), tape.constant(k), tape.constant(v)).value();
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(o[(h * 3 + i) * 4 + j] == v[h * 4 + j]);
  }

  SUBCASE("identical keys average the values") {
    Tensor q = rng.normal_tensor({1, 2, 3});
    Tensor k({1, 4, 3});
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t j = 0; j < 3; ++j) k[r * 3 + j] = 0.3 * static_cast<double>(j) - 0.2;
    Tensor v = rng.normal_tensor({1, 4, 3});
    auto o = ops::scaled_dot_attention(tape.constant(q), tape.constant(k), tape.constant(v)).value();
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double m = 0.0;
        for (std::size_t r = 0; r < 4; ++r) m += v[r * 3 + j];
        CHECK(o[i * 3 + j] == doctest::Approx(m / 4.0).epsilon(1e-14));
      }
  }

  SUBCASE("matches softmax/matmul composition per head") {
    const std::size_t heads = 2, m = 3, n = 3, dh = 2;
    Tensor q = rng.normal_tensor({heads, m, dh});
    Tensor k = rng.normal_tensor({heads, n, dh});
    Tensor v = rng.normal_tensor({heads, n, dh});
    auto fused = ops::scaled_dot_attention(tape.constant(q), tape.constant(k), tape.constant(v)).value();
    for (std::size_t h = 0; h < heads; ++h) {
      auto slice = [&](const Tensor& t, std::size_t rows) {
        std::vector<double> d(t.data().begin() + static_cast<long>(h * rows * dh),
                              t.data().begin() + static_cast<long>((h + 1) * rows * dh));
        return Tensor::matrix(rows, dh, std::move(d));
      };
      auto qh = tape.constant(slice(q, m)), kh = tape.constant(slice(k, n)), vh = tape.constant(slice(v, n));
      auto scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
      auto oracle = ops::matmul(ops::softmax(scores, 1), vh).value();
      for (std::size_t i = 0; i < m * dh; ++i) CHECK(std::abs(fused[h * m * dh + i] - oracle[i]) < 1e-12);
    }
  }

  CHECK_THROWS_AS(ops::scaled_dot_attention(tape.constant(Tensor({1, 2, 3})), tape.constant(Tensor({1, 2, 4})),
                                            tape.constant(Tensor({1, 2, 4}))),
                  ShapeError);
}

TEST_CASE("grad_check basics") {
  Tensor x = Tensor::scalar(3.0);
  std::vector<ParamRef> params{{"x", &x}};
  auto report = grad_check([&](Binder& b) { auto v = b(x); return ops::mul(v, v); }, params, 1e-5);
  CHECK(report.max_rel_err < 1e-9);
  CHECK(report.worst_analytic == doctest::Approx(6.0));

  Rng rng(9);
  Tensor z = rng.normal_tensor({1, 5});
  Tape tape;
  auto zv = tape.variable(z);
  auto s = ops::sum(ops::softmax(zv, 1));
  tape.backward(s);
  for (double g : tape.grad_of(zv)) CHECK(std::abs(g) < 1e-12);

  CHECK_THROWS_AS(grad_check([&](Binder& b) { return ops::mul(b(x), b(x)); }, params, 0.0), Error);
}

TEST_CASE("every differentiable op passes a finite-difference check") {
  Rng rng(21);
  Tensor a = rng.normal_tensor({3, 4});
  Tensor b = rng.normal_tensor({4, 2});
  Tensor c = rng.normal_tensor({3, 4});
  Tensor row = rng.normal_tensor({1, 4});
  Tensor gate = rng.normal_tensor({3, 1});
  Tensor s = Tensor::scalar(0.7);
  Tensor q = rng.normal_tensor({2, 3, 2});
  Tensor k = rng.normal_tensor({2, 5, 2});
  Tensor v = rng.normal_tensor({2, 5, 2});
  Tensor target = rng.normal_tensor({3, 2});
  Tensor weights = Tensor::row({0.5, 2.0});
  Tensor probe = rng.normal_tensor({3, 4});
  Tensor probe2 = rng.normal_tensor({3, 2});
  Tensor probe3 = rng.normal_tensor({2, 3, 2});
  std::vector<ParamRef> params{{"a", &a}, {"b", &b}, {"c", &c}, {"row", &row}, {"gate", &gate},
                               {"s", &s}, {"q", &q}, {"k", &k}, {"v", &v}};

  // Each op is contracted with a fixed random probe so gradients are generic.
  auto dot = [](Var x, const Tensor& p) { return ops::sum(ops::mul(x, x.tape->constant(p))); };
  const std::vector<std::pair<const char*, ScalarFn>> cases = {
      {"matmul", [&](Binder& bd) { return dot(ops::matmul(bd(a), bd(b)), probe2); }},
      {"transpose", [&](Binder& bd) { return dot(ops::transpose(ops::transpose(bd(a))), probe); }},
      {"add/sub/mul", [&](Binder& bd) { return dot(ops::mul(ops::add(bd(a), bd(c)), ops::sub(bd(a), bd(c))), probe); }},
      {"row ops", [&](Binder& bd) { return dot(ops::add_row(ops::mul_row(bd(a), bd(row)), bd(row)), probe); }},
      {"scale_rows", [&](Binder& bd) { return dot(ops::scale_rows(bd(a), bd(gate)), probe); }},
      {"mul_scalar", [&](Binder& bd) { return dot(ops::mul_scalar(bd(a), bd(s)), probe); }},
      {"softmax0", [&](Binder& bd) { return dot(ops::softmax(bd(a), 0), probe); }},
      {"softmax1", [&](Binder& bd) { return dot(ops::softmax(bd(a), 1), probe); }},
      {"layer_norm", [&](Binder& bd) { return dot(ops::layer_norm(bd(a), 1e-5), probe); }},
      {"gelu", [&](Binder& bd) { return dot(ops::gelu(bd(a)), probe); }},
      {"silu", [&](Binder& bd) { return dot(ops::silu(bd(a)), probe); }},
      {"heads", [&](Binder& bd) { return dot(ops::merge_heads(ops::split_heads(bd(a), 2)), probe); }},
      {"attention", [&](Binder& bd) { return dot(ops::scaled_dot_attention(bd(q), bd(k), bd(v)), probe3); }},
      {"weighted_mse", [&](Binder& bd) { return ops::weighted_mse(ops::matmul(bd(a), bd(b)), target, weights); }},
      {"mean", [&](Binder& bd) { return ops::mean(ops::mul(bd(a), bd(a))); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    auto report = grad_check(fn, params, 1e-5);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("non-finite results are errors") {
  Tape tape;
  auto big = tape.constant(Tensor::row({1e308, 1.0}));
  CHECK_THROWS_AS(ops::scale(big, 10.0), NumericError);
  CHECK_THROWS_AS(tape.constant(Tensor::row({std::nan(""), 1.0})), NumericError);
}

TEST_CASE("weighted loss masks") {
  Tape tape;
  Rng rng(4);
  Tensor p = rng.normal_tensor({1, 2});
  Tensor t = rng.normal_tensor({1, 2});
  auto pv = tape.variable(p);
  const double ones = ops::weighted_mse(pv, t, Tensor::row({1.0, 1.0})).value()[0];
  const double plain = ((p[0] - t[0]) * (p[0] - t[0]) + (p[1] - t[1]) * (p[1] - t[1])) / 2.0;
  CHECK(std::abs(ones - plain) < 1e-15);
  CHECK_THROWS_AS(ops::weighted_mse(pv, t, Tensor::row({-1.0, 1.0})), Error);
}

TEST_CASE("rng determinism") {
  CHECK(philox4x32(0, 0).words[0] == 0x6627e8d5u);
  CHECK(philox4x32(0, 0).words[1] == 0xe169c58du);
  CHECK(philox4x32(0, 0).words[2] == 0xbc57ac4cu);
  CHECK(philox4x32(0, 0).words[3] == 0x9b00dbd8u);

  Rng a(RngState{42, 7}), b(RngState{42, 7});
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(a.state() == b.state());
  CHECK(Rng(1).normal_tensor({4, 4}) == Rng(1).normal_tensor({4, 4}));
  CHECK_FALSE(Rng(1).normal_tensor({4, 4}) == Rng(2).normal_tensor({4, 4}));

  Rng parent(3);
  const auto before = parent.state();
  Rng child = parent.fork(1);
  CHECK(parent.state() == before);
  CHECK(child.next_u64() != Rng(3).fork(2).next_u64());

  Rng u(8);
  double m = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) m += u.normal();
  CHECK(std::abs(m / n) < 0.05);
}
