// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace emma::cli {

enum ExitCode : int {
  kOk = 0,
  kRuntimeFailure = 1,
  kUsage = 2,
  kMissingCapability = 3,
  kCompositionMismatch = 4,
  kVerificationFailure = 5,
};

// Largest connector (base plus one branch) the gradcheck command accepts.
inline constexpr std::size_t kGradcheckMaxParams = 20000;
inline constexpr std::uint64_t kGradcheckSeed = 11;

/// Runs the emma command line; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct ManifestEntry {
  std::string path;
  double blend = 1.0;
  std::optional<int> time_override;
};

// One branch per line: `checkpoint_path blend_weight [time_override]`; `#` starts a comment.
// Relative paths resolve against `base_dir`.
std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::string& base_dir);

}  // namespace emma::cli
