// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "emma/numerics/tensor.hpp"

namespace emma {

enum class StreamKind { text_proxy, extra_modality };

inline constexpr const char* kTextModality = "text";

/// A sequence of condition features consumed as cross-attention keys/values.
struct ConditionStream {
  StreamKind kind = StreamKind::text_proxy;
  std::string modality = kTextModality;
  Tensor tokens;  // n×d_cond, n ≥ 1

  static ConditionStream text(Tensor tokens) { return {StreamKind::text_proxy, kTextModality, std::move(tokens)}; }
  static ConditionStream extra(std::string modality, Tensor tokens) {
    return {StreamKind::extra_modality, std::move(modality), std::move(tokens)};
  }

  std::size_t length() const { return tokens.rows(); }
  std::size_t width() const { return tokens.cols(); }
};

}  // namespace emma
