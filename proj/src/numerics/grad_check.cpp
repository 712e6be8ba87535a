// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "emma/error.hpp"

namespace emma {

namespace {

double evaluate(const ScalarFn& f) {
  Tape tape;
  Binder binder(tape);
  Var out = f(binder);
  if (out.value().size() != 1) throw ShapeError("grad_check: function must return a scalar");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: function returned a non-finite value");
  return v;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, std::span<const ParamRef> params, double h) {
  if (!(h > 0.0)) throw Error("grad_check: step h must be positive");

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Binder binder(tape);
    for (const auto& p : params) binder.set_trainable(*p.tensor);
    Var out = f(binder);
    if (out.value().size() != 1) throw ShapeError("grad_check: function must return a scalar");
    if (!std::isfinite(out.value()[0])) throw NumericError("grad_check: function returned a non-finite value");
    tape.backward(out);
    for (const auto& p : params) {
      auto g = binder.grad(*p.tensor);
      if (g.empty()) {
        analytic.emplace_back(p.tensor->size(), 0.0);
      } else {
        analytic.emplace_back(g.begin(), g.end());
      }
    }
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& t = *params[pi].tensor;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const double fp = evaluate(f);
      t[i] = saved - h;
      const double fm = evaluate(f);
      t[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (report.worst_param.empty() || rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace emma
