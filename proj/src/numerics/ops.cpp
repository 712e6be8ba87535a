// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/numerics/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "emma/error.hpp"

namespace emma::ops {

namespace {

void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw ShapeError(std::string(op) + ": " + what);
}

void require_matrix(Var v, const char* op) {
  require(v.value().rank() == 2, op, "expected a matrix, got " + shape_str(v.shape()));
}

void require_same(Var a, Var b, const char* op) {
  require(a.shape() == b.shape(), op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw Error("operand is not bound to a tape");
  return *a.tape;
}

// Dense kernels shared by forward and backward passes: C (+)= A·B, C (+)= Aᵀ·B, C (+)= A·Bᵀ.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// a is k×m (used transposed), b is k×n, c is m×n.
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// a is m×k, b is n×k (used transposed), c is m×n.
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

template <class Fwd, class Deriv>
Var unary(Var x, const char* name, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  const std::array<Var, 1> parents{x};
  return tape_of(x).record(name, std::move(out), parents, [x, deriv](Tape& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    auto g = t.grad(self);
    auto gx = t.grad(x.id);
    const auto& xv = t.value(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
  require(b.value().rows() == k, "matmul", "inner dimensions " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, n});
  gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  const std::array<Var, 2> parents{a, b};
  return tape_of(a).record("matmul", std::move(out), parents, [a, b, m, k, n](Tape& t, std::size_t self) {
    const double* g = t.grad(self).data();
    if (t.requires_grad(a)) gemm_nt(g, t.value(b.id).data().data(), t.grad(a.id).data(), m, n, k);
    if (t.requires_grad(b)) gemm_tn(t.value(a.id).data().data(), g, t.grad(b.id).data(), k, m, n);
  });
}

Var transpose(Var a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.value().at(i, j);
  const std::array<Var, 1> parents{a};
  return tape_of(a).record("transpose", std::move(out), parents, [a, m, n](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Var add(Var a, Var b) {
  require_same(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const std::array<Var, 2> parents{a, b};
  return tape_of(a).record("add", std::move(out), parents, [a, b](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    for (Var p : {a, b}) {
      if (!t.requires_grad(p)) continue;
      auto gp = t.grad(p.id);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const std::array<Var, 2> parents{a, b};
  return tape_of(a).record("sub", std::move(out), parents, [a, b](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.requires_grad(a)) {
      auto ga = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::array<Var, 2> parents{a, b};
  return tape_of(a).record("mul", std::move(out), parents, [a, b](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.requires_grad(a)) {
      auto ga = t.grad(a.id);
      const auto& bv = t.value(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b.id);
      const auto& av = t.value(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  const std::array<Var, 1> parents{a};
  return tape_of(a).record("scale", std::move(out), parents, [a, c](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

Var add_const(Var a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + c;
  const std::array<Var, 1> parents{a};
  return tape_of(a).record("add_const", std::move(out), parents, [a](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var add_row(Var x, Var row) {
  require_matrix(x, "add_row");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  require(row.shape() == Shape{1, n}, "add_row", "row " + shape_str(row.shape()) + " for " + shape_str(x.shape()));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.value().at(i, j) + row.value()[j];
  const std::array<Var, 2> parents{x, row};
  return tape_of(x).record("add_row", std::move(out), parents, [x, row, m, n](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    if (t.requires_grad(x)) {
      auto gx = t.grad(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(row)) {
      auto gr = t.grad(row.id);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
    }
  });
}

Var mul_row(Var x, Var row) {
  require_matrix(x, "mul_row");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  require(row.shape() == Shape{1, n}, "mul_row", "row " + shape_str(row.shape()) + " for " + shape_str(x.shape()));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.value().at(i, j) * row.value()[j];
  const std::array<Var, 2> parents{x, row};
  return tape_of(x).record("mul_row", std::move(out), parents, [x, row, m, n](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& xv = t.value(x.id);
    const auto& rv = t.value(row.id);
    if (t.requires_grad(x)) {
      auto gx = t.grad(x.id);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * rv[j];
    }
    if (t.requires_grad(row)) {
      auto gr = t.grad(row.id);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j] * xv[i * n + j];
    }
  });
}

Var scale_rows(Var x, Var gate) {
  require_matrix(x, "scale_rows");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  require(gate.shape() == Shape{m, 1}, "scale_rows",
          "gate " + shape_str(gate.shape()) + " for " + shape_str(x.shape()));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.value().at(i, j) * gate.value()[i];
  const std::array<Var, 2> parents{x, gate};
  return tape_of(x).record("scale_rows", std::move(out), parents, [x, gate, m, n](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& xv = t.value(x.id);
    const auto& gv = t.value(gate.id);
    if (t.requires_grad(x)) {
      auto gx = t.grad(x.id);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * gv[i];
    }
    if (t.requires_grad(gate)) {
      auto gg = t.grad(gate.id);
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * xv[i * n + j];
        gg[i] += s;
      }
    }
  });
}

Var mul_scalar(Var x, Var s) {
  require(s.value().size() == 1, "mul_scalar", "scalar operand has shape " + shape_str(s.shape()));
  const double sv = s.value()[0];
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * sv;
  const std::array<Var, 2> parents{x, s};
  return tape_of(x).record("mul_scalar", std::move(out), parents, [x, s](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& xv = t.value(x.id);
    const double sv = t.value(s.id)[0];
    if (t.requires_grad(x)) {
      auto gx = t.grad(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
    }
    if (t.requires_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      t.grad(s.id)[0] += acc;
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::array<Var, 1> parents{x};
  return tape_of(x).record("sum", Tensor::scalar(s), parents, [x](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& gx : t.grad(x.id)) gx += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var softmax(Var x, std::size_t axis) {
  const auto& shape = x.shape();
  require(axis < shape.size(), "softmax", "axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  const std::size_t n = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  Tensor out(shape);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  const std::array<Var, 1> parents{x};
  return tape_of(x).record("softmax", std::move(out), parents, [x, n, outer, inner](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& y = t.value(self);
    auto gx = t.grad(x.id);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Var layer_norm(Var x, double eps) {
  const auto& shape = x.shape();
  const std::size_t d = shape.back();
  require(d >= 2, "layer_norm", "normalized axis needs at least 2 entries, got " + shape_str(shape));
  require(eps >= 0.0, "layer_norm", "eps must be non-negative");
  const std::size_t rows = x.value().size() / d;
  Tensor out(shape);
  std::vector<double> inv_std(rows);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (xr[j] - mu) * is;
  }
  const std::array<Var, 1> parents{x};
  return tape_of(x).record("layer_norm", std::move(out), parents,
                           [x, d, rows, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                             auto g = t.grad(self);
                             const auto& y = t.value(self);
                             auto gx = t.grad(x.id);
                             const double inv_d = 1.0 / static_cast<double>(d);
                             for (std::size_t r = 0; r < rows; ++r) {
                               double mg = 0.0, mgy = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                 mg += g[r * d + j];
                                 mgy += g[r * d + j] * y[r * d + j];
                               }
                               mg *= inv_d;
                               mgy *= inv_d;
                               for (std::size_t j = 0; j < d; ++j) {
                                 const std::size_t i = r * d + j;
                                 gx[i] += inv_std[r] * (g[i] - mg - y[i] * mgy);
                               }
                             }
                           });
}

Var gelu(Var x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v); });
}

Var silu(Var x) {
  return unary(
      x, "silu", [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Var split_heads(Var x, std::size_t heads) {
  require_matrix(x, "split_heads");
  const std::size_t m = x.value().rows(), d = x.value().cols();
  require(heads > 0 && d % heads == 0, "split_heads", "width " + std::to_string(d) + " not divisible by heads");
  const std::size_t dh = d / heads;
  Tensor out({heads, m, dh});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < dh; ++j) out[(h * m + i) * dh + j] = x.value()[i * d + h * dh + j];
  const std::array<Var, 1> parents{x};
  return tape_of(x).record("split_heads", std::move(out), parents, [x, heads, m, d, dh](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gx = t.grad(x.id);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < dh; ++j) gx[i * d + h * dh + j] += g[(h * m + i) * dh + j];
  });
}

Var merge_heads(Var x) {
  require(x.value().rank() == 3, "merge_heads", "expected h×m×dₕ, got " + shape_str(x.shape()));
  const std::size_t heads = x.shape()[0], m = x.shape()[1], dh = x.shape()[2], d = heads * dh;
  Tensor out({m, d});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < dh; ++j) out[i * d + h * dh + j] = x.value()[(h * m + i) * dh + j];
  const std::array<Var, 1> parents{x};
  return tape_of(x).record("merge_heads", std::move(out), parents, [x, heads, m, d, dh](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gx = t.grad(x.id);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < dh; ++j) gx[(h * m + i) * dh + j] += g[i * d + h * dh + j];
  });
}

Var scaled_dot_attention(Var q, Var k, Var v) {
  const char* op = "scaled_dot_attention";
  require(q.value().rank() == 3 && k.value().rank() == 3 && v.value().rank() == 3, op, "expected rank-3 operands");
  const std::size_t heads = q.shape()[0], m = q.shape()[1], dh = q.shape()[2], n = k.shape()[1];
  require(k.shape() == Shape{heads, n, dh}, op, "key shape " + shape_str(k.shape()) + " vs query " + shape_str(q.shape()));
  require(v.shape() == Shape{heads, n, dh}, op, "value shape " + shape_str(v.shape()) + " vs key " + shape_str(k.shape()));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Attention weights are kept for the backward pass.
  std::vector<double> probs(heads * m * n, 0.0);
  Tensor out({heads, m, dh});
  const double* qd = q.value().data().data();
  const double* kd = k.value().data().data();
  const double* vd = v.value().data().data();
  for (std::size_t h = 0; h < heads; ++h) {
    double* p = probs.data() + h * m * n;
    gemm_nt(qd + h * m * dh, kd + h * n * dh, p, m, dh, n);
    for (std::size_t i = 0; i < m; ++i) {
      double* pi = p + i * n;
      double mx = pi[0] * inv_sqrt;
      for (std::size_t j = 0; j < n; ++j) {
        pi[j] *= inv_sqrt;
        mx = std::max(mx, pi[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        pi[j] = std::exp(pi[j] - mx);
        z += pi[j];
      }
      for (std::size_t j = 0; j < n; ++j) pi[j] /= z;
    }
    gemm_nn(p, vd + h * n * dh, out.data().data() + h * m * dh, m, n, dh);
  }
  const std::array<Var, 3> parents{q, k, v};
  return tape_of(q).record(
      op, std::move(out), parents,
      [q, k, v, heads, m, n, dh, inv_sqrt, probs = std::move(probs)](Tape& t, std::size_t self) {
        const double* g = t.grad(self).data();
        const double* qd = t.value(q.id).data().data();
        const double* kd = t.value(k.id).data().data();
        const double* vd = t.value(v.id).data().data();
        const bool need_q = t.requires_grad(q), need_k = t.requires_grad(k), need_v = t.requires_grad(v);
        double* gq = need_q ? t.grad(q.id).data() : nullptr;
        double* gk = need_k ? t.grad(k.id).data() : nullptr;
        double* gv = need_v ? t.grad(v.id).data() : nullptr;
        std::vector<double> dp(m * n);
        for (std::size_t h = 0; h < heads; ++h) {
          const double* p = probs.data() + h * m * n;
          const double* gh = g + h * m * dh;
          if (need_v) gemm_tn(p, gh, gv + h * n * dh, n, m, dh);
          if (!need_q && !need_k) continue;
          std::fill(dp.begin(), dp.end(), 0.0);
          gemm_nt(gh, vd + h * n * dh, dp.data(), m, dh, n);
          for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += dp[i * n + j] * p[i * n + j];
            for (std::size_t j = 0; j < n; ++j) dp[i * n + j] = p[i * n + j] * (dp[i * n + j] - dot) * inv_sqrt;
          }
          if (need_q) gemm_nn(dp.data(), kd + h * n * dh, gq + h * m * dh, m, n, dh);
          if (need_k) gemm_tn(dp.data(), qd + h * m * dh, gk + h * n * dh, n, m, dh);
        }
      });
}

Var linear(Var x, Var w, std::optional<Var> b) {
  Var y = matmul(x, w);
  return b ? add_row(y, *b) : y;
}

Var weighted_mse(Var pred, const Tensor& target, const Tensor& weights) {
  require_matrix(pred, "weighted_mse");
  require(pred.shape() == target.shape(), "weighted_mse",
          "prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  const std::size_t m = pred.value().rows(), n = pred.value().cols();
  require(weights.shape() == Shape{1, n}, "weighted_mse", "weights must be 1×" + std::to_string(n));
  for (double w : weights.data()) {
    if (w < 0.0) throw Error("weighted_mse: negative loss weight");
  }
  const double inv = 1.0 / static_cast<double>(m * n);
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double e = pred.value().at(i, j) - target.at(i, j);
      s += weights[j] * e * e;
    }
  const std::array<Var, 1> parents{pred};
  return tape_of(pred).record("weighted_mse", Tensor::scalar(s * inv), parents,
                              [pred, target, weights, m, n, inv](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0];
                                auto gp = t.grad(pred.id);
                                const auto& pv = t.value(pred.id);
                                for (std::size_t i = 0; i < m; ++i)
                                  for (std::size_t j = 0; j < n; ++j) {
                                    const std::size_t idx = i * n + j;
                                    gp[idx] += g * 2.0 * weights[j] * (pv[idx] - target[idx]) * inv;
                                  }
                              });
}

}  // namespace emma::ops
