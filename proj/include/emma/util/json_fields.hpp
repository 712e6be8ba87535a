// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <string>
#include <type_traits>

#include "emma/error.hpp"
#include "json.hpp"

namespace emma {

/// Reads fields of one JSON object section and rejects keys nobody asked for.
class JsonSection {
 public:
  JsonSection(const nlohmann::json& obj, std::string name) : obj_(obj), name_(std::move(name)) {
    if (!obj_.is_object()) throw ConfigError("section '" + name_ + "' must be an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_unsigned()) throw ConfigError(name_ + "." + key + " must be a non-negative integer");
    }
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }

  const nlohmann::json& child(const char* key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + name_ + "." + it.key() + "'");
    }
  }

 private:
  const nlohmann::json& obj_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace emma
