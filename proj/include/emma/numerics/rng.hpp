// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "emma/numerics/tensor.hpp"

namespace emma {

struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  friend bool operator==(const RngState&, const RngState&) = default;
};

// Philox4x32-10 block function: one 128-bit output per (counter, key).
struct PhiloxBlock {
  std::uint32_t words[4];
};
PhiloxBlock philox4x32(std::uint64_t counter, std::uint64_t key);

/// Counter-based generator. Draw k is a pure function of (seed, counter + k),
/// so streams are reproducible across runs and platforms and independent
/// substreams can be derived without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_{seed, 0} {}
  explicit Rng(RngState state) : state_(state) {}

  const RngState& state() const { return state_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  Tensor normal_tensor(Shape shape, double stddev = 1.0);

  // Independent generator for a named substream of this seed; does not advance this one.
  Rng fork(std::uint64_t stream) const;

 private:
  RngState state_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace emma
