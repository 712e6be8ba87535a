// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "emma/cli/cli.hpp"
#include "emma/error.hpp"
#include "emma/evalviz/evalviz.hpp"
#include "emma/trainer/checkpoint.hpp"
#include "emma/trainer/run_config.hpp"

using namespace emma;
namespace fs = std::filesystem;

namespace {

constexpr const char* kTinyConfig = R"({
  "seed": 5,
  "connector": {"num_latents": 4, "d_model": 8, "n_heads": 2, "d_time": 8, "depth": 1},
  "diffusion": {"T_max": 12, "beta_end": 0.2, "d_time": 8, "hidden": 16, "attn_dim": 8, "guidance_weight": 2.0},
  "train": {"base_lr": 0.01, "warmup_iters": 2, "iters": 6, "batch_size": 4, "log_every": 3},
  "task": {"samples_per_cell": 2}
})";

struct Result {
  int code;
  std::string out, err;
};

Result emma_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

void spit(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

// A scratch directory holding the tiny config, a text-stage checkpoint, two branches and a composed pair.
struct Workspace {
  fs::path dir;

  Workspace() {
    dir = fs::temp_directory_path() / ("emma_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    spit(dir / "run.json", kTinyConfig);
    spit(dir / "targets.json",
         R"({"targets": [{"text": {}, "modalities": {"angle": 1, "radius": 2}}, {"modalities": {"angle": 3, "radius": 0}}]})");
    spit(dir / "angle_targets.json", R"({"targets": [{"text": {"radius": 1}, "modalities": {"angle": 2}}]})");
    require_ok({"train", "--stage", "pr", "--config", p("run.json"), "--out", p("pr.ckpt")});
    require_ok({"train", "--stage", "agpr", "--modality", "angle", "--config", p("run.json"), "--init", p("pr.ckpt"),
                "--out", p("angle.ckpt")});
    require_ok({"train", "--stage", "agpr", "--modality", "radius", "--config", p("run.json"), "--init", p("pr.ckpt"),
                "--out", p("radius.ckpt")});
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string p(const std::string& name) const { return (dir / name).string(); }

  static void require_ok(const std::vector<std::string>& args) {
    const auto r = emma_cli(args);
    INFO(r.err);
    REQUIRE(r.code == 0);
  }
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("manifest parsing") {
  const auto e = cli::parse_manifest("# header\n\na.ckpt 1.0\n  /abs/b.ckpt 0.5 7  # note\n", "dir");
  REQUIRE(e.size() == 2);
  CHECK(e[0].path == (fs::path("dir") / "a.ckpt").string());
  CHECK(e[0].blend == 1.0);
  CHECK_FALSE(e[0].time_override.has_value());
  CHECK(e[1].path == "/abs/b.ckpt");
  CHECK(e[1].blend == 0.5);
  CHECK(e[1].time_override == 7);
  CHECK(cli::parse_manifest("", "").empty());
  CHECK_THROWS_AS(cli::parse_manifest("a.ckpt\n", ""), ConfigError);
  CHECK_THROWS_AS(cli::parse_manifest("a.ckpt x\n", ""), ConfigError);
  CHECK_THROWS_AS(cli::parse_manifest("a.ckpt 1 2 3\n", ""), ConfigError);
  CHECK_THROWS_AS(cli::parse_manifest("a.ckpt 1 -1\n", ""), ConfigError);
  CHECK_THROWS_AS(cli::parse_manifest("a.ckpt nan\n", ""), ConfigError);
  CHECK_THROWS_AS(cli::parse_manifest("a.ckpt 1 2.5\n", ""), ConfigError);
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"toy.json", "tiny.json"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_run_config(std::string(EMMA_SOURCE_DIR) + "/configs/" + name));
  }
  CHECK_NOTHROW(parse_targets_json(read_text_file(std::string(EMMA_SOURCE_DIR) + "/configs/conditions.json")));
  CHECK_NOTHROW(parse_probe_json(read_text_file(std::string(EMMA_SOURCE_DIR) + "/configs/probe.json")));
}

TEST_CASE("usage errors exit 2") {
  auto& ws = workspace();
  CHECK(emma_cli({}).code == cli::kUsage);
  CHECK(emma_cli({"frobnicate"}).code == cli::kUsage);
  CHECK(emma_cli({"--help"}).code == cli::kOk);

  const auto missing_init =
      emma_cli({"train", "--stage", "agpr", "--modality", "angle", "--config", ws.p("run.json"), "--out", ws.p("x")});
  CHECK(missing_init.code == cli::kUsage);
  CHECK(missing_init.err.find("--init") != std::string::npos);
  CHECK_FALSE(fs::exists(ws.p("x")));

  CHECK(emma_cli({"train", "--stage", "sideways", "--config", ws.p("run.json"), "--out", ws.p("x")}).code ==
        cli::kUsage);
  spit(ws.dir / "bad.json", R"({"connector": {"num_latents": 4, "colour": 1}})");
  const auto bad_key = emma_cli({"train", "--stage", "pr", "--config", ws.p("bad.json"), "--out", ws.p("x")});
  CHECK(bad_key.code == cli::kUsage);
  CHECK(bad_key.err.find("colour") != std::string::npos);
  CHECK(emma_cli({"generate", "--ckpt", ws.p("nope.ckpt"), "--conditions", ws.p("targets.json"), "--n", "1", "--out",
                  ws.p("x.csv")})
            .code == cli::kUsage);
}

TEST_CASE("train writes a checkpoint and a loss log; zero iterations keep the init") {
  auto& ws = workspace();
  const auto log = slurp(ws.p("pr.ckpt.loss.csv"));
  std::istringstream lines(log);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "iter,loss,lr,grad_norm");
  std::size_t rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 6);

  const auto r = emma_cli({"train", "--stage", "pr", "--config", ws.p("run.json"), "--init", ws.p("pr.ckpt"), "--iters",
                           "0", "--out", ws.p("pr0.ckpt"), "--loss-log", ws.p("pr0.csv")});
  REQUIRE(r.code == 0);
  const auto a = load_checkpoint(ws.p("pr.ckpt"));
  const auto b = load_checkpoint(ws.p("pr0.ckpt"));
  CHECK(frozen_partition_hash(a) == frozen_partition_hash(b));
  CHECK(slurp(ws.p("pr0.csv")) == "iter,loss,lr,grad_norm\n");

  const auto branch = load_checkpoint(ws.p("angle.ckpt"));
  CHECK(frozen_partition_hash(branch) == frozen_partition_hash(a));
  REQUIRE(branch.branches.size() == 1);
  CHECK(branch.branches[0].params.modality == "angle");
}

TEST_CASE("train refuses to overwrite its inputs and leaves them untouched") {
  auto& ws = workspace();
  const auto before = slurp(ws.p("pr.ckpt"));
  const auto r = emma_cli({"train", "--stage", "agpr", "--modality", "angle", "--config", ws.p("run.json"), "--init",
                           ws.p("pr.ckpt"), "--out", ws.p("pr.ckpt")});
  CHECK(r.code == cli::kUsage);
  CHECK(slurp(ws.p("pr.ckpt")) == before);
}

TEST_CASE("train determinism") {
  auto& ws = workspace();
  for (const char* name : {"d1", "d2"}) {
    Workspace::require_ok({"train", "--stage", "agpr", "--modality", "radius", "--config", ws.p("run.json"), "--init",
                           ws.p("pr.ckpt"), "--out", ws.p(std::string(name) + ".ckpt")});
  }
  CHECK(slurp(ws.p("d1.ckpt")) == slurp(ws.p("d2.ckpt")));
  CHECK(slurp(ws.p("d1.ckpt.loss.csv")) == slurp(ws.p("d2.ckpt.loss.csv")));
  CHECK(slurp(ws.p("d1.ckpt")) == slurp(ws.p("radius.ckpt")));
}

TEST_CASE("generate: determinism, empty output, missing capability") {
  auto& ws = workspace();
  const std::vector<std::string> base = {"generate", "--ckpt", ws.p("angle.ckpt"), "--conditions",
                                         ws.p("angle_targets.json"), "--n", "3", "--seed", "4"};
  auto with_out = [&](const std::string& out) {
    auto a = base;
    a.insert(a.end(), {"--out", ws.p(out)});
    return a;
  };
  Workspace::require_ok(with_out("g1.csv"));
  Workspace::require_ok(with_out("g2.csv"));
  CHECK(slurp(ws.p("g1.csv")) == slurp(ws.p("g2.csv")));
  const auto labeled = read_samples_csv(*std::make_unique<std::istringstream>(slurp(ws.p("g1.csv"))));
  CHECK(labeled.batch.n == 3);
  CHECK(labeled.labels[0] == "a2-r1");

  Workspace::require_ok({"generate", "--ckpt", ws.p("angle.ckpt"), "--conditions", ws.p("angle_targets.json"), "--n",
                         "0", "--out", ws.p("g0.csv")});
  CHECK(slurp(ws.p("g0.csv")) == "sample_id,dim0,dim1,condition_label\n");

  const auto missing = emma_cli({"generate", "--ckpt", ws.p("angle.ckpt"), "--conditions", ws.p("targets.json"), "--n",
                                 "1", "--out", ws.p("gm.csv")});
  CHECK(missing.code == cli::kMissingCapability);
  CHECK(missing.err.find("radius") != std::string::npos);

  const auto w1 = emma_cli({"generate", "--ckpt", ws.p("angle.ckpt"), "--conditions", ws.p("angle_targets.json"), "--n",
                            "3", "--seed", "4", "--guidance", "2", "--out", ws.p("gw.csv")});
  REQUIRE(w1.code == 0);
  CHECK(slurp(ws.p("gw.csv")) == slurp(ws.p("g1.csv")));  // default guidance comes from the config
}

TEST_CASE("compose: single-branch equivalence, order invariance, mismatches") {
  auto& ws = workspace();
  spit(ws.dir / "one.txt", "angle.ckpt 1.0\n");
  const auto c = emma_cli({"compose", "--manifest", ws.p("one.txt"), "--out", ws.p("one.ckpt")});
  REQUIRE(c.code == 0);
  CHECK(c.out.find("verified") != std::string::npos);
  for (const char* ck : {"one.ckpt", "angle.ckpt"}) {
    Workspace::require_ok({"generate", "--ckpt", ws.p(ck), "--conditions", ws.p("angle_targets.json"), "--n", "4",
                           "--seed", "9", "--out", ws.p(std::string(ck) + ".csv")});
  }
  std::istringstream s1(slurp(ws.p("one.ckpt.csv"))), s2(slurp(ws.p("angle.ckpt.csv")));
  const auto a = read_samples_csv(s1), b = read_samples_csv(s2);
  REQUIRE(a.batch.n == b.batch.n);
  for (std::size_t i = 0; i < a.batch.values.size(); ++i) {
    CHECK(std::abs(a.batch.values[i] - b.batch.values[i]) < 1e-9);
  }

  spit(ws.dir / "ar.txt", "angle.ckpt 1\nradius.ckpt 0.8 3\n");
  spit(ws.dir / "ra.txt", "# swapped\nradius.ckpt 0.8 3\nangle.ckpt 1\n");
  Workspace::require_ok({"compose", "--manifest", ws.p("ar.txt"), "--out", ws.p("ar.ckpt")});
  Workspace::require_ok({"compose", "--manifest", ws.p("ra.txt"), "--out", ws.p("ra.ckpt")});
  for (const char* ck : {"ar", "ra"}) {
    Workspace::require_ok({"generate", "--ckpt", ws.p(std::string(ck) + ".ckpt"), "--conditions", ws.p("targets.json"),
                           "--n", "3", "--seed", "2", "--out", ws.p(std::string(ck) + ".csv")});
  }
  CHECK(slurp(ws.p("ar.csv")) == slurp(ws.p("ra.csv")));

  // Same shapes, different text-stage weights.
  Workspace::require_ok({"train", "--stage", "pr", "--config", ws.p("run.json"), "--seed", "77", "--out",
                         ws.p("pr77.ckpt")});
  Workspace::require_ok({"train", "--stage", "agpr", "--modality", "radius", "--config", ws.p("run.json"), "--init",
                         ws.p("pr77.ckpt"), "--out", ws.p("radius77.ckpt")});
  spit(ws.dir / "bad_hash.txt", "angle.ckpt 1\nradius77.ckpt 1\n");
  const auto h = emma_cli({"compose", "--manifest", ws.p("bad_hash.txt"), "--out", ws.p("bad.ckpt")});
  CHECK(h.code == cli::kCompositionMismatch);
  CHECK(h.err.find("radius77.ckpt") != std::string::npos);
  CHECK(h.err.find("angle.ckpt  ") == std::string::npos);
  CHECK_FALSE(fs::exists(ws.p("bad.ckpt")));

  std::string other = kTinyConfig;
  other.replace(other.find("\"T_max\": 12"), 11, "\"T_max\": 14");
  spit(ws.dir / "other.json", other);
  Workspace::require_ok({"train", "--stage", "pr", "--config", ws.p("other.json"), "--out", ws.p("pr_other.ckpt")});
  spit(ws.dir / "bad_cfg.txt", "angle.ckpt 1\npr_other.ckpt 1\n");
  const auto m = emma_cli({"compose", "--manifest", ws.p("bad_cfg.txt"), "--out", ws.p("bad.ckpt")});
  CHECK(m.code == cli::kCompositionMismatch);
  CHECK(m.err.find("pr_other.ckpt") != std::string::npos);

  spit(ws.dir / "empty.txt", "# nothing\n");
  CHECK(emma_cli({"compose", "--manifest", ws.p("empty.txt"), "--out", ws.p("bad.ckpt")}).code ==
        cli::kCompositionMismatch);
}

TEST_CASE("gate-viz on a fresh branch") {
  auto& ws = workspace();
  Workspace::require_ok({"train", "--stage", "agpr", "--modality", "angle", "--config", ws.p("run.json"), "--init",
                         ws.p("pr.ckpt"), "--iters", "0", "--out", ws.p("fresh.ckpt")});
  const auto out = ws.dir / "viz" / "nested";
  const auto r = emma_cli({"gate-viz", "--ckpt", ws.p("fresh.ckpt"), "--out", out.string()});
  REQUIRE(r.code == 0);
  const auto id = load_checkpoint(ws.p("fresh.ckpt")).branches.at(0).branch_id;
  std::ifstream f(out / (id + ".csv"));
  const auto h = read_gate_heatmap(f, id);
  for (double v : h.attn.values()) CHECK(v == 0.0);
  for (double v : h.ffn.values()) CHECK(v == 0.0);
  CHECK(h.attn.shape() == std::vector<std::size_t>{1, 4});
  const auto summary = slurp(out / "summary.txt");
  CHECK(summary.find("attn_sparsity=1 ") != std::string::npos);
  CHECK(summary.find("ffn_sparsity=1 ") != std::string::npos);

  CHECK(emma_cli({"gate-viz", "--ckpt", ws.p("pr.ckpt"), "--out", out.string()}).code == cli::kMissingCapability);
  CHECK(emma_cli({"gate-viz", "--ckpt", ws.p("fresh.ckpt"), "--q", "1.5", "--out", out.string()}).code == cli::kUsage);
}

TEST_CASE("eval and dataset") {
  auto& ws = workspace();
  Workspace::require_ok({"dataset", "--config", ws.p("run.json"), "--out", ws.p("data.csv")});
  CHECK(fs::exists(ws.p("data.csv.spec.json")));
  Workspace::require_ok({"generate", "--ckpt", ws.p("angle.ckpt"), "--conditions", ws.p("angle_targets.json"), "--n",
                         "5", "--out", ws.p("e.csv")});
  const auto r = emma_cli({"eval", "--samples", ws.p("e.csv"), "--config", ws.p("run.json"), "--out", ws.p("e.txt")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("n=5") != std::string::npos);
  CHECK(slurp(ws.p("e.txt")) == r.out);
  CHECK(emma_cli({"eval", "--samples", ws.p("e.csv")}).code == cli::kUsage);
}

TEST_CASE("gradcheck guard and verdicts") {
  auto& ws = workspace();
  const auto big = emma_cli({"gradcheck", "--config", std::string(EMMA_SOURCE_DIR) + "/configs/toy.json"});
  CHECK(big.code == cli::kUsage);
  CHECK(big.err.find("parameters") != std::string::npos);

  spit(ws.dir / "gc.json", R"({"connector": {"num_latents": 2, "d_model": 8, "n_heads": 1, "d_time": 4, "depth": 1}})");
  const auto zero = emma_cli({"gradcheck", "--config", ws.p("gc.json"), "--tolerance", "0"});
  CHECK(zero.code == cli::kVerificationFailure);
  CHECK(zero.err.find("gradient check failed at ") != std::string::npos);
  CHECK(zero.out.find("worst=") != std::string::npos);

  const auto ok = emma_cli({"gradcheck", "--config", ws.p("gc.json"), "--seed", "11"});
  INFO(ok.out);
  CHECK(ok.code == cli::kOk);
}
