// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/trainer/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "emma/error.hpp"
#include "emma/trainer/run_config.hpp"
#include "json.hpp"

namespace emma {

namespace {

constexpr char kMagic[8] = {'E', 'M', 'M', 'A', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void bytes(std::string_view s) { out_.append(s.data(), s.size()); }
  void section(std::string_view tag, std::string_view payload) {
    u32(static_cast<std::uint32_t>(tag.size()));
    bytes(tag);
    u64(payload.size());
    bytes(payload);
  }
  std::string& str() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::string_view bytes(std::uint64_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string_view section(std::string_view tag) {
    const auto len = u32();
    if (bytes(len) != tag) throw CheckpointError("expected section '" + std::string(tag) + "'");
    return bytes(u64());
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint is truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

struct NamedTensor {
  std::string name;
  std::uint8_t label;
  Tensor* tensor;
};

std::vector<NamedTensor> collect(CheckpointBundle& b) {
  std::vector<NamedTensor> out;
  for_each_frozen_param(b, [&](const std::string& n, Tensor& t) { out.push_back({n, 0, &t}); });
  for (std::size_t k = 0; k < b.branches.size(); ++k) {
    for_each_param(b.branches[k].params, "branch." + std::to_string(k),
                   [&](const std::string& n, Tensor& t) { out.push_back({n, 1, &t}); });
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& c) { return a.name < c.name; });
  return out;
}

std::string meta_json(const CheckpointBundle& b) {
  nlohmann::json branches = nlohmann::json::array();
  for (const auto& e : b.branches) {
    std::vector<double> lambdas;
    for (const auto& level : e.params.levels) lambdas.push_back(level.gate.lambda_scale);
    nlohmann::json j = {{"id", e.branch_id}, {"modality", e.params.modality}, {"blend", e.blend}, {"lambda", lambdas}};
    j["time_override"] = e.time_override ? nlohmann::json(*e.time_override) : nlohmann::json(nullptr);
    branches.push_back(std::move(j));
  }
  nlohmann::json meta = {{"metadata", b.metadata}, {"branches", branches}};
  return meta.dump();
}

}  // namespace

std::string serialize_checkpoint(const CheckpointBundle& bundle) {
  CheckpointBundle copy = bundle;
  Writer w;
  w.bytes(std::string_view(kMagic, sizeof kMagic));
  w.u32(kCheckpointVersion);
  w.section("kind", to_string(bundle.kind));
  w.section("config", model_config_json(bundle.config));
  w.section("meta", meta_json(bundle));

  Writer params;
  const auto tensors = collect(copy);
  params.u64(tensors.size());
  for (const auto& nt : tensors) {
    params.u32(static_cast<std::uint32_t>(nt.name.size()));
    params.bytes(nt.name);
    params.str().push_back(static_cast<char>(nt.label));
    params.u32(static_cast<std::uint32_t>(nt.tensor->rank()));
    for (auto d : nt.tensor->shape()) params.u64(d);
    for (double v : nt.tensor->values()) params.u64(std::bit_cast<std::uint64_t>(v));
  }
  w.section("params", params.str());

  const Digest frozen = frozen_partition_hash(bundle);
  w.section("frozen_hash", std::string_view(reinterpret_cast<const char*>(frozen.data()), frozen.size()));

  const Digest whole = sha256(w.str());
  w.bytes(std::string_view(reinterpret_cast<const char*>(whole.data()), whole.size()));
  return std::move(w.str());
}

CheckpointBundle deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 32) throw CheckpointError("checkpoint is truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw CheckpointError("not an EMMA checkpoint");
  const std::string_view body(bytes.data(), bytes.size() - 32);
  const Digest expect = sha256(body);
  if (std::memcmp(expect.data(), bytes.data() + body.size(), 32) != 0) {
    throw CheckpointError("checkpoint checksum mismatch (file corrupted or truncated)");
  }

  Reader r(body);
  r.bytes(sizeof kMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }

  CheckpointBundle b;
  b.kind = parse_bundle_kind(r.section("kind"));
  try {
    b.config = parse_model_config_json(std::string(r.section("config")));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid stored config: ") + e.what());
  }

  Rng skeleton(0);
  b.base = init_connector(b.config.connector, skeleton);
  b.denoiser = init_denoiser(b.config.diffusion, b.config.connector.d_model, skeleton);
  try {
    const auto meta = nlohmann::json::parse(r.section("meta"));
    b.metadata = meta.at("metadata").get<std::map<std::string, std::string>>();
    for (const auto& j : meta.at("branches")) {
      BranchEntry e;
      e.branch_id = j.at("id").get<std::string>();
      e.blend = j.at("blend").get<double>();
      if (!j.at("time_override").is_null()) e.time_override = j.at("time_override").get<int>();
      e.params = init_branch(b.config.connector, j.at("modality").get<std::string>(), skeleton);
      const auto lambdas = j.at("lambda").get<std::vector<double>>();
      if (lambdas.size() != e.params.levels.size()) throw CheckpointError("branch level count mismatch");
      for (std::size_t l = 0; l < lambdas.size(); ++l) e.params.levels[l].gate.lambda_scale = lambdas[l];
      b.branches.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("invalid checkpoint metadata: ") + e.what());
  } catch (const CapabilityError& e) {
    throw CheckpointError(std::string("invalid branch in checkpoint: ") + e.what());
  }

  const auto slots = collect(b);
  Reader p(r.section("params"));
  if (p.u64() != slots.size()) throw CheckpointError("checkpoint tensor count mismatch");
  for (const auto& slot : slots) {
    const auto name = p.bytes(p.u32());
    if (name != slot.name) throw CheckpointError("unexpected tensor '" + std::string(name) + "'");
    const auto label = static_cast<std::uint8_t>(p.bytes(1)[0]);
    if (label != slot.label) throw CheckpointError("wrong partition label for '" + slot.name + "'");
    const auto rank = p.u32();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(p.u64());
    if (shape != slot.tensor->shape()) throw CheckpointError("shape mismatch for '" + slot.name + "'");
    for (double& v : slot.tensor->data()) v = std::bit_cast<double>(p.u64());
  }
  if (!p.done()) throw CheckpointError("trailing bytes in params section");

  const auto stored = r.section("frozen_hash");
  const Digest frozen = frozen_partition_hash(b);
  if (stored.size() != 32 || std::memcmp(stored.data(), frozen.data(), 32) != 0) {
    throw CheckpointError("frozen partition hash mismatch");
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint sections");
  return b;
}

void save_checkpoint(const CheckpointBundle& bundle, const std::string& path) {
  const std::string bytes = serialize_checkpoint(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

CheckpointBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace emma
