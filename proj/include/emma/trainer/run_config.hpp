// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "emma/trainer/model.hpp"
#include "emma/trainer/policy.hpp"

namespace emma {

struct RunConfig {
  ModelConfig model;
  TrainPolicy train;
  std::uint64_t seed = 0;
  std::string loss_log;  // empty: derived from the output checkpoint path

  void validate() const;
};

// Parses a JSON run config with sections connector, diffusion, train, task, paths and a top-level seed.
// Unknown keys anywhere are errors; the result is fully validated.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Canonical (key-sorted, compact) JSON of a model config, as stored in checkpoints.
std::string model_config_json(const ModelConfig& cfg);
ModelConfig parse_model_config_json(const std::string& text);

std::string read_text_file(const std::string& path);

}  // namespace emma
