// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/trainer/model.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>

#include "emma/error.hpp"

namespace emma {

void ModelConfig::validate() const {
  connector.validate();
  diffusion.validate();
  task.validate();
  if (diffusion.sample_dim != 2) throw ConfigError("diffusion.sample_dim must be 2 for the ring task");
  if (!(with_task_streams(connector, task) == connector)) {
    throw ConfigError("connector stream widths disagree with the task spec");
  }
}

ConnectorConfig with_task_streams(ConnectorConfig cfg, const TaskSpec& task) {
  cfg.text_dim = task.text_dim;
  cfg.text_tokens = kCaptionTokens;
  cfg.modality_dims = {{kAngleModality, task.modal_dim}, {kRadiusModality, task.modal_dim}};
  return cfg;
}

std::string_view to_string(BundleKind kind) {
  switch (kind) {
    case BundleKind::pr_pretrain: return "pr_pretrain";
    case BundleKind::agpr_train: return "agpr_train";
    case BundleKind::composed: return "composed";
  }
  return "?";
}

BundleKind parse_bundle_kind(std::string_view text) {
  if (text == "pr_pretrain") return BundleKind::pr_pretrain;
  if (text == "agpr_train") return BundleKind::agpr_train;
  if (text == "composed") return BundleKind::composed;
  throw CheckpointError("unknown checkpoint kind '" + std::string(text) + "'");
}

CheckpointBundle init_bundle(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  CheckpointBundle b;
  b.kind = BundleKind::pr_pretrain;
  b.config = cfg;
  b.base = init_connector(cfg.connector, rng);
  b.denoiser = init_denoiser(cfg.diffusion, cfg.connector.d_model, rng);
  return b;
}

std::string to_hex(const Digest& d) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto byte : d) {
    s.push_back(digits[byte >> 4]);
    s.push_back(digits[byte & 15]);
  }
  return s;
}

Digest sha256(std::string_view bytes) {
  Digest out{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, out.data(), &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  return out;
}

namespace {

void append_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_tensor(std::string& s, const std::string& name, const Tensor& t) {
  append_u64(s, name.size());
  s += name;
  append_u64(s, t.rank());
  for (auto d : t.shape()) append_u64(s, d);
  for (double v : t.values()) append_u64(s, std::bit_cast<std::uint64_t>(v));
}

using Named = std::vector<std::pair<std::string, const Tensor*>>;

Digest hash_named(Named items) {
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string bytes;
  for (const auto& [name, t] : items) append_tensor(bytes, name, *t);
  return sha256(bytes);
}

}  // namespace

void for_each_frozen_param(const CheckpointBundle& b, const ConstParamVisitor& f) {
  for_each_param(b.base, f);
  for_each_param(b.denoiser, f);
}

void for_each_frozen_param(CheckpointBundle& b, const ParamVisitor& f) {
  for_each_param(b.base, f);
  for_each_param(b.denoiser, f);
}

Digest frozen_partition_hash(const CheckpointBundle& b) {
  Named items;
  for_each_frozen_param(b, [&](const std::string& n, const Tensor& t) { items.emplace_back(n, &t); });
  return hash_named(std::move(items));
}

Digest branch_hash(const BranchParams& p) {
  Named items;
  for_each_param(p, "agpr", [&](const std::string& n, const Tensor& t) { items.emplace_back(n, &t); });
  std::string tag = p.modality;
  for (const auto& level : p.levels) {
    tag.push_back('|');
    append_u64(tag, std::bit_cast<std::uint64_t>(level.gate.lambda_scale));
  }
  const Digest params = hash_named(std::move(items));
  return sha256(tag + std::string(params.begin(), params.end()));
}

std::string make_branch_id(const BranchParams& p) { return p.modality + "-" + to_hex(branch_hash(p)).substr(0, 8); }

}  // namespace emma
