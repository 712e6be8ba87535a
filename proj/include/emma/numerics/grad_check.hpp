// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "emma/numerics/tape.hpp"

namespace emma {

struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

// Builds a scalar on the given binder's tape; must bind every parameter through the binder.
using ScalarFn = std::function<Var(Binder&)>;

/// Compares reverse-mode gradients against central differences
/// (f(x+h) − f(x−h)) / 2h for every coordinate of every parameter.
/// The relative error of a coordinate uses max(|analytic|, |numeric|, 1e-8)
/// as denominator. Parameters are restored exactly afterwards.
GradCheckReport grad_check(const ScalarFn& f, std::span<const ParamRef> params, double h);

}  // namespace emma
