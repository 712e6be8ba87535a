// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "emma/trainer/model.hpp"

namespace emma {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers little-endian:
///   "EMMACKPT" u32 version
///   sections: u32 tag length, tag, u64 payload length, payload
///     kind, config (canonical JSON), meta (JSON), params, frozen_hash
///   trailing SHA-256 of every preceding byte
/// The params payload lists name-sorted tensors: name, partition label, shape, f64 data.
std::string serialize_checkpoint(const CheckpointBundle& bundle);
CheckpointBundle deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const CheckpointBundle& bundle, const std::string& path);
CheckpointBundle load_checkpoint(const std::string& path);

}  // namespace emma
