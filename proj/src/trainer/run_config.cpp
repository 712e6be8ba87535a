// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/trainer/run_config.hpp"

#include <fstream>
#include <sstream>

#include "emma/util/json_fields.hpp"

namespace emma {

using nlohmann::json;

namespace {

json connector_json(const ConnectorConfig& c, bool with_streams) {
  json j = {{"num_latents", c.num_latents}, {"d_model", c.d_model},   {"n_heads", c.n_heads},
            {"d_time", c.d_time},           {"depth", c.depth},       {"lambda_scale", c.lambda_scale},
            {"gate_mode", std::string(to_string(c.gate_mode))}};
  if (with_streams) {
    j["text_dim"] = c.text_dim;
    j["text_tokens"] = c.text_tokens;
    j["modality_dims"] = c.modality_dims;
  }
  return j;
}

ConnectorConfig read_connector(const json& j, bool with_streams) {
  ConnectorConfig c;
  JsonSection s(j, "connector");
  s.read("num_latents", c.num_latents);
  s.read("d_model", c.d_model);
  s.read("n_heads", c.n_heads);
  s.read("d_time", c.d_time);
  s.read("depth", c.depth);
  s.read("lambda_scale", c.lambda_scale);
  std::string mode(to_string(c.gate_mode));
  s.read("gate_mode", mode);
  c.gate_mode = parse_gate_mode(mode);
  if (with_streams) {
    s.read("text_dim", c.text_dim);
    s.read("text_tokens", c.text_tokens);
    s.read("modality_dims", c.modality_dims);
  }
  s.finish();
  return c;
}

json diffusion_json(const DiffusionConfig& d) {
  return {{"T_max", d.T_max},   {"beta_start", d.beta_start}, {"beta_end", d.beta_end},
          {"sample_dim", d.sample_dim}, {"guidance_weight", d.guidance_weight}, {"d_time", d.d_time},
          {"hidden", d.hidden}, {"attn_dim", d.attn_dim}};
}

DiffusionConfig read_diffusion(const json& j) {
  DiffusionConfig d;
  JsonSection s(j, "diffusion");
  s.read("T_max", d.T_max);
  s.read("beta_start", d.beta_start);
  s.read("beta_end", d.beta_end);
  s.read("sample_dim", d.sample_dim);
  s.read("guidance_weight", d.guidance_weight);
  s.read("d_time", d.d_time);
  s.read("hidden", d.hidden);
  s.read("attn_dim", d.attn_dim);
  s.finish();
  return d;
}

TrainPolicy read_train(const json& j) {
  TrainPolicy p;
  JsonSection s(j, "train");
  s.read("base_lr", p.base_lr);
  s.read("beta1", p.beta1);
  s.read("beta2", p.beta2);
  s.read("eps", p.eps);
  s.read("weight_decay", p.weight_decay);
  s.read("warmup_iters", p.warmup_iters);
  s.read("warmup_floor", p.warmup_floor);
  s.read("clip_norm", p.clip_norm);
  s.read("batch_size", p.batch_size);
  s.read("iters", p.iters);
  s.read("cond_dropout", p.cond_dropout);
  s.read("p_mention_angle", p.p_mention_angle);
  s.read("p_mention_radius", p.p_mention_radius);
  s.read("log_every", p.log_every);
  s.finish();
  return p;
}

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + " is not valid JSON: " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
}

RunConfig parse_run_config(const std::string& text) {
  const json root = parse_json(text, "run config");
  JsonSection top(root, "config");
  RunConfig rc;
  const json empty = json::object();
  rc.model.connector = read_connector(top.has("connector") ? top.child("connector") : empty, false);
  rc.model.diffusion = read_diffusion(top.has("diffusion") ? top.child("diffusion") : empty);
  rc.model.task = task_from_json(top.has("task") ? top.child("task").dump() : std::string("{}"));
  rc.train = read_train(top.has("train") ? top.child("train") : empty);
  if (top.has("paths")) {
    JsonSection paths(top.child("paths"), "paths");
    paths.read("loss_log", rc.loss_log);
    paths.finish();
  }
  top.read("seed", rc.seed);
  top.finish();
  rc.model.connector = with_task_streams(rc.model.connector, rc.model.task);
  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text_file(path)); }

std::string model_config_json(const ModelConfig& cfg) {
  json j = {{"connector", connector_json(cfg.connector, true)},
            {"diffusion", diffusion_json(cfg.diffusion)},
            {"task", json::parse(task_to_json(cfg.task))}};
  return j.dump();
}

ModelConfig parse_model_config_json(const std::string& text) {
  const json root = parse_json(text, "model config");
  JsonSection top(root, "model");
  ModelConfig cfg;
  cfg.connector = read_connector(top.child("connector"), true);
  cfg.diffusion = read_diffusion(top.child("diffusion"));
  cfg.task = task_from_json(top.child("task").dump());
  top.finish();
  cfg.validate();
  return cfg;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace emma
