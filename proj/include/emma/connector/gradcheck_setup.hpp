// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "emma/connector/params.hpp"
#include "emma/numerics/grad_check.hpp"

namespace emma {

/// Fan-in scaled weights, AdaLN hidden biases near 1 and O(1) gates keep every gradient
/// coordinate well above the finite-difference noise floor at h = 1e-5.
void randomize_for_gradcheck(ConnectorParams& base, BranchParams& branch, Rng& rng);

/// Central-difference check of the full connector (text path plus one branch on `modality`)
/// under the loss sum(tokens ⊙ probe) with a random probe and random streams at t = 7.
GradCheckReport connector_grad_check(const ConnectorConfig& cfg, const std::string& modality, std::uint64_t seed,
                                     double h);

}  // namespace emma
