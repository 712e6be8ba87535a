// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>

#include "emma/numerics/tape.hpp"
#include "emma/numerics/tensor.hpp"

// Differentiable primitives. Every op checks shapes, records its result on the
// operands' tape and throws NumericError if the result is not finite.
namespace emma::ops {

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_const(Var a, double c);

// x[m×n] with a 1×n row broadcast over every row.
Var add_row(Var x, Var row);
Var mul_row(Var x, Var row);
// x[m×n] with row i multiplied by g[i]; g is m×1.
Var scale_rows(Var x, Var g);
// x multiplied by a 1×1 scalar node.
Var mul_scalar(Var x, Var s);

Var sum(Var x);
Var mean(Var x);

Var softmax(Var x, std::size_t axis);
// Normalizes the last axis to zero mean and unit variance (no affine).
Var layer_norm(Var x, double eps);
Var gelu(Var x);
Var silu(Var x);

// [m×(h·dₕ)] <-> [h×m×dₕ]
Var split_heads(Var x, std::size_t heads);
Var merge_heads(Var x);

// softmax(q·kᵀ/√dₕ)·v per head; q is h×m×dₕ, k and v are h×n×dₕ.
Var scaled_dot_attention(Var q, Var k, Var v);

// x·w (+ b); w is in×out, b is 1×out.
Var linear(Var x, Var w, std::optional<Var> b = std::nullopt);

// Σ weight[j]·(pred[i,j] − target[i,j])² / size(pred), weights broadcast over rows.
Var weighted_mse(Var pred, const Tensor& target, const Tensor& weights);

}  // namespace emma::ops
