// Copyright 2026 The RFCR Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "rfcr/checkpoint.hpp"
#include "rfcr/cli.hpp"
#include "rfcr/container.hpp"
#include "test_util.hpp"

namespace rfcr {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// `base` with the keys in `extra` replaced.
std::string with(const fs::path& base, const std::string& extra) {
  auto kv = KeyValueConfig::load(base);
  const auto over = KeyValueConfig::parse(extra);
  for (const auto& key : over.keys()) kv.set(key, over.get(key, ""));
  return kv.canonical();
}

constexpr const char* kSpec =
    "room = 2, 2, 1\n"
    "classes = 3\n"
    "noise = 0.002\n"
    "seed = 3\n"
    "primitive = plane 1 1 0 2 2 0 0 0 120\n"
    "primitive = sphere 0.6 0.6 0.3 0.25 0 0 0 1 60\n"
    "primitive = box 1.4 1.3 0.25 0.4 0.4 0.5 0.3 2 60\n";

constexpr const char* kSingleClassSpec =
    "classes = 3\n"
    "primitive = plane 1 1 0 2 2 0 0 1 150\n";

/// Small scenes plus a training config that runs in well under a second.
struct Workspace {
  fs::path dir;
  fs::path config;

  explicit Workspace(const std::string& name, const std::string& extra = "") {
    dir = testing::scratch_dir(name);
    write_text(dir / "scene.spec", kSpec);
    const auto s = cmd_synth(dir / "scene.spec", dir / "data", 3, 1);
    if (!s.ok()) throw std::runtime_error(s.summary);
    auto kv = KeyValueConfig::parse(
        "data.manifest = data/manifest.txt\n"
        "data.classes = 3\n"
        "hierarchy.levels = 3\n"
        "hierarchy.base_voxel = 0.15\n"
        "hierarchy.neighbor_cap = 10\n"
        "network.encoder_widths = 6, 8, 8\n"
        "network.decoder_widths = 6, 8, 8\n"
        "network.head_hidden = 6\n"
        "train.epochs = 3\n"
        "train.learning_rate = 0.02\n");
    config = dir / "run.cfg";
    write_text(config, kv.canonical());
    write_text(config, with(config, extra));
  }
};

TEST(Synth, SingleSceneAndManifest) {
  const auto dir = testing::scratch_dir("synth_one");
  write_text(dir / "s.spec", kSpec);
  const auto o = cmd_synth(dir / "s.spec", dir / "out", 1);
  ASSERT_TRUE(o.ok()) << o.summary;
  EXPECT_EQ(read_xyzl(dir / "out" / "scene_0000.xyzl").size(), 240u);
  const auto m = read_manifest(dir / "out" / "manifest.txt");
  ASSERT_EQ(m.train.size(), 1u);
  EXPECT_EQ(m.train[0], "scene_0000.xyzl");
  EXPECT_TRUE(m.val.empty());
}

TEST(Synth, ByteIdenticalAcrossRuns) {
  const auto dir = testing::scratch_dir("synth_repeat");
  write_text(dir / "s.spec", kSpec);
  ASSERT_TRUE(cmd_synth(dir / "s.spec", dir / "a", 4, 1).ok());
  ASSERT_TRUE(cmd_synth(dir / "s.spec", dir / "b", 4, 1).ok());
  for (const char* f : {"scene_0000.xyzl", "scene_0003.xyzl", "manifest.txt"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  EXPECT_NE(slurp(dir / "a" / "scene_0000.xyzl"), slurp(dir / "a" / "scene_0001.xyzl"));
  const auto m = read_manifest(dir / "a" / "manifest.txt");
  EXPECT_EQ(m.train.size(), 3u);
  ASSERT_EQ(m.val.size(), 1u);
  EXPECT_EQ(m.val[0], "scene_0003.xyzl");
}

TEST(Synth, BadArguments) {
  const auto dir = testing::scratch_dir("synth_bad");
  write_text(dir / "s.spec", kSpec);
  EXPECT_EQ(cmd_synth(dir / "s.spec", dir / "o", 0).status, kExitUsage);
  EXPECT_EQ(cmd_synth(dir / "s.spec", dir / "o", 2, 2).status, kExitUsage);
  EXPECT_EQ(cmd_synth(dir / "missing.spec", dir / "o", 1).status, kExitData);
  write_text(dir / "bad.spec", "primitive = sphere 0 0 0 0 0 0 0 0 5\n");
  EXPECT_EQ(cmd_synth(dir / "bad.spec", dir / "o", 1).status, kExitUsage);
}

TEST(HierarchyCommand, WritesContainerAndSummary) {
  const auto dir = testing::scratch_dir("hier_cmd");
  write_text(dir / "s.spec", kSpec);
  ASSERT_TRUE(cmd_synth(dir / "s.spec", dir, 1).ok());
  write_text(dir / "h.cfg", "hierarchy.levels = 3\nhierarchy.base_voxel = 0.1\n");
  const auto o = cmd_hierarchy(dir / "scene_0000.xyzl", dir / "h.cfg", dir / "h.rfcr");
  ASSERT_TRUE(o.ok()) << o.summary;
  const auto c = read_container(dir / "h.rfcr");
  ASSERT_TRUE(c.hierarchy.has_value());
  EXPECT_FALSE(c.codes.has_value());
  HierarchyConfig hc;
  hc.levels = 3;
  hc.base_voxel = 0.1;
  EXPECT_EQ(*c.hierarchy, build_hierarchy(read_xyzl(dir / "scene_0000.xyzl"), hc));
  std::istringstream csv(slurp(dir / "h.rfcr.summary.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  EXPECT_EQ(line, "level,points,voxel,radius");
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 3u);
}

TEST(RfccCommand, SingleClassScenePopcountIsOne) {
  const auto dir = testing::scratch_dir("rfcc_single");
  write_text(dir / "s.spec", kSingleClassSpec);
  ASSERT_TRUE(cmd_synth(dir / "s.spec", dir, 1).ok());
  write_text(dir / "r.cfg", "data.classes = 3\nhierarchy.levels = 4\nhierarchy.base_voxel = 0.1\n");
  const auto o = cmd_rfcc(dir / "scene_0000.xyzl", dir / "r.cfg", dir / "r.rfcr");
  ASSERT_TRUE(o.ok()) << o.summary;
  const auto c = read_container(dir / "r.rfcr");
  ASSERT_TRUE(c.codes.has_value());
  for (std::size_t l = 1; l <= 4; ++l) {
    EXPECT_DOUBLE_EQ(c.codes->mean_popcount(l), 1.0);
    for (std::size_t i = 0; i < c.codes->level(l).points(); ++i) EXPECT_TRUE(c.codes->level(l).test(i, 1));
  }
  EXPECT_NE(slurp(dir / "r.rfcr.summary.csv").find("mean_popcount"), std::string::npos);
}

TEST(RfccCommand, OneHotModeAndRoundTrip) {
  const auto dir = testing::scratch_dir("rfcc_modes");
  write_text(dir / "s.spec", kSpec);
  ASSERT_TRUE(cmd_synth(dir / "s.spec", dir, 1).ok());
  write_text(dir / "r.cfg", "data.classes = 3\nhierarchy.levels = 4\nhierarchy.base_voxel = 0.1\n");
  const auto scene = dir / "scene_0000.xyzl";
  ASSERT_TRUE(cmd_rfcc(scene, dir / "r.cfg", dir / "multi.rfcr").ok());
  ASSERT_TRUE(cmd_rfcc(scene, dir / "r.cfg", dir / "one.rfcr", "one_hot").ok());
  const auto multi = read_container(dir / "multi.rfcr");
  const auto one = read_container(dir / "one.rfcr");
  const auto cloud = read_xyzl(scene);
  EXPECT_EQ(*multi.codes, gen_targets(*multi.hierarchy, cloud.labels, 3));
  double above = 0.0;
  for (std::size_t l = 1; l <= 4; ++l) {
    EXPECT_DOUBLE_EQ(one.codes->mean_popcount(l), 1.0);
    above += multi.codes->mean_popcount(l) - 1.0;
  }
  EXPECT_GT(above, 0.0);
  EXPECT_EQ(cmd_rfcc(scene, dir / "r.cfg", dir / "x.rfcr", "two_hot").status, kExitUsage);
}

TEST(TrainCommand, ZeroEpochsSavesInitialization) {
  Workspace ws("train_zero", "train.epochs = 0\ntrain.seed = 7\n");
  RunOverrides ov;
  ov.out = ws.dir / "run";
  const auto o = cmd_train(ws.config, ov);
  ASSERT_TRUE(o.ok()) << o.summary;
  const auto ck = load_checkpoint(ws.dir / "run" / "checkpoint.bin");
  EXPECT_EQ(ck.params, init_params(ck.network, derive_seed(7, 1)));
  EXPECT_EQ(slurp(ws.dir / "run" / "report.txt"), "epochs = 0\n");
  const auto cfg = slurp(ws.dir / "run" / "config.txt");
  EXPECT_EQ(cfg.rfind("# hash ", 0), 0u);
}

TEST(TrainCommand, ReplayIsByteIdentical) {
  Workspace ws("train_replay");
  RunOverrides a, b;
  a.out = ws.dir / "a";
  b.out = ws.dir / "b";
  ASSERT_TRUE(cmd_train(ws.config, a).ok());
  ASSERT_TRUE(cmd_train(ws.config, b).ok());
  for (const char* f : {"metrics.csv", "checkpoint.bin", "report.txt", "config.txt"}) {
    EXPECT_EQ(slurp(ws.dir / "a" / f), slurp(ws.dir / "b" / f)) << f;
  }
  RunOverrides c = a;
  c.out = ws.dir / "c";
  c.seed = 2;
  ASSERT_TRUE(cmd_train(ws.config, c).ok());
  EXPECT_NE(slurp(ws.dir / "a" / "checkpoint.bin"), slurp(ws.dir / "c" / "checkpoint.bin"));
}

TEST(TrainCommand, SavedConfigReproducesRun) {
  Workspace ws("train_saved_config");
  RunOverrides a;
  a.out = ws.dir / "a";
  a.mode = "one_hot";
  a.mask = "3";
  ASSERT_TRUE(cmd_train(ws.config, a).ok());
  fs::copy_file(ws.dir / "a" / "config.txt", ws.dir / "again.cfg");
  RunOverrides b;
  b.out = ws.dir / "b";
  ASSERT_TRUE(cmd_train(ws.dir / "again.cfg", b).ok());
  EXPECT_EQ(slurp(ws.dir / "a" / "checkpoint.bin"), slurp(ws.dir / "b" / "checkpoint.bin"));
  const auto ck = load_checkpoint(ws.dir / "b" / "checkpoint.bin");
  EXPECT_EQ(ck.target_mode, TargetMode::one_hot);
  EXPECT_EQ(ck.supervision_mask, std::vector<std::size_t>{3});
}

TEST(TrainCommand, ErrorsMapToExitCodes) {
  Workspace ws("train_errors");
  EXPECT_EQ(cmd_train(ws.config).status, kExitUsage);
  RunOverrides ov;
  ov.out = ws.dir / "x";
  ov.mode = "three_hot";
  EXPECT_EQ(cmd_train(ws.config, ov).status, kExitUsage);
  ov.mode.reset();
  ov.mask = "1,2";
  EXPECT_EQ(cmd_train(ws.config, ov).status, kExitUsage);
  EXPECT_EQ(cmd_train(ws.dir / "nope.cfg", ov).status, kExitData);

  write_text(ws.dir / "hot.cfg", with(ws.config, "train.learning_rate = 1e6\n"));
  RunOverrides hot;
  hot.out = ws.dir / "hot";
  const auto o = cmd_train(ws.dir / "hot.cfg", hot);
  EXPECT_EQ(o.status, kExitDiverged);
  EXPECT_TRUE(fs::exists(ws.dir / "hot" / "metrics.csv"));
  EXPECT_FALSE(fs::exists(ws.dir / "hot" / "checkpoint.bin"));
}

TEST(EvalCommand, WritesMetricsAndPredictions) {
  Workspace ws("eval_ok");
  RunOverrides ov;
  ov.out = ws.dir / "run";
  ASSERT_TRUE(cmd_train(ws.config, ov).ok());
  const auto o = cmd_eval(ws.dir / "run" / "checkpoint.bin", {ws.dir / "data" / "manifest.txt"}, ws.dir / "eval");
  ASSERT_TRUE(o.ok()) << o.summary;
  const auto metrics = KeyValueConfig::parse(slurp(ws.dir / "eval" / "metrics.txt"));
  EXPECT_EQ(metrics.get("scenes", ""), "3");
  std::size_t points = 0;
  for (int k = 0; k < 3; ++k) {
    std::ostringstream name;
    name << "scene_000" << k;
    const auto cloud = read_xyzl(ws.dir / "data" / (name.str() + ".xyzl"));
    for (auto y : cloud.labels) points += y != kIgnoreLabel;
    const auto ply = slurp(ws.dir / "eval" / (name.str() + ".pred.ply"));
    EXPECT_NE(ply.find("element vertex " + std::to_string(cloud.size()) + "\n"), std::string::npos);
  }
  EXPECT_EQ(metrics.get("points", ""), std::to_string(points));
  const auto iou = slurp(ws.dir / "eval" / "iou.csv");
  EXPECT_EQ(std::count(iou.begin(), iou.end(), '\n'), 4);
  EXPECT_EQ(slurp(ws.dir / "eval" / "histogram.csv").rfind("level,lower,upper,count\n", 0), 0u);
}

TEST(EvalCommand, ConvergedToyRunScoresNearOne) {
  const auto dir = testing::scratch_dir("eval_toy");
  write_xyzl(testing::separable_toy_scene(2), dir / "toy.xyzl");
  write_manifest({{"toy.xyzl"}, {"toy.xyzl"}}, dir / "manifest.txt");
  write_text(dir / "toy.cfg", "data.manifest = manifest.txt\ndata.classes = 2\ntrain.epochs = 20\n");
  RunOverrides ov;
  ov.out = dir / "run";
  ASSERT_TRUE(cmd_train(dir / "toy.cfg", ov).ok());
  const auto o = cmd_eval(dir / "run" / "checkpoint.bin", {dir / "toy.xyzl"}, dir / "eval");
  ASSERT_TRUE(o.ok()) << o.summary;
  const auto metrics = KeyValueConfig::parse(slurp(dir / "eval" / "metrics.txt"));
  EXPECT_GE(metrics.get_double("mIoU", 0.0), 0.99);
}

TEST(EvalCommand, MissingCheckpointWritesNothing) {
  Workspace ws("eval_missing");
  const auto o = cmd_eval(ws.dir / "none.bin", {ws.dir / "data" / "scene_0000.xyzl"}, ws.dir / "eval");
  EXPECT_NE(o.status, kExitOk);
  EXPECT_FALSE(fs::exists(ws.dir / "eval"));

  RunOverrides ov;
  ov.out = ws.dir / "run";
  ASSERT_TRUE(cmd_train(ws.config, ov).ok());
  const auto bad = cmd_eval(ws.dir / "run" / "checkpoint.bin", {ws.dir / "data" / "gone.xyzl"}, ws.dir / "eval");
  EXPECT_EQ(bad.status, kExitData);
  EXPECT_FALSE(fs::exists(ws.dir / "eval"));

  write_text(ws.dir / "trunc.bin", slurp(ws.dir / "run" / "checkpoint.bin").substr(0, 100));
  EXPECT_EQ(cmd_eval(ws.dir / "trunc.bin", {ws.dir / "data" / "scene_0000.xyzl"}, ws.dir / "eval").status, kExitData);
  EXPECT_FALSE(fs::exists(ws.dir / "eval"));
}

TEST(Ablate, GridLayout) {
  const auto rc = RunConfig::from_kv(KeyValueConfig::parse("hierarchy.levels = 5\n"));
  const auto grid = ablation_grid(rc);
  ASSERT_EQ(grid.size(), 7u + 4u);
  EXPECT_EQ(grid[0].name, "baseline");
  EXPECT_TRUE(grid[0].config.train.supervision_mask.empty());
  EXPECT_FALSE(grid[0].config.train.fd_enabled);
  EXPECT_EQ(grid[3].config.train.target_mode, TargetMode::one_hot);
  EXPECT_EQ(grid[4].config.train.target_mode, TargetMode::ovu);
  EXPECT_EQ(grid[5].config.train.head_side, HeadSide::encoder);
  EXPECT_EQ(grid[10].name, "without_level_5");
  EXPECT_EQ(grid[10].config.train.supervision_mask, (std::vector<std::size_t>{2, 3, 4}));
  std::set<std::string> hashes;
  for (const auto& c : grid) hashes.insert(c.config.hash());
  EXPECT_EQ(hashes.size(), grid.size());
}

TEST(Ablate, BaselineRowMatchesTrainCommand) {
  Workspace ws("ablate", "train.epochs = 2\n");
  const auto o = cmd_ablate(ws.config, ws.dir / "grid", {}, 1);
  ASSERT_TRUE(o.ok()) << o.summary;
  std::istringstream csv(slurp(ws.dir / "grid" / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("row,mode,config_hash,status,", 0), 0u);
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 7u + 2u);
  for (const auto& r : rows) EXPECT_NE(r.find(",ok,"), std::string::npos) << r;

  write_text(ws.dir / "baseline.cfg", with(ws.config,
                                          "train.lambda1 = 0\ntrain.lambda2 = 0\ntrain.fd_enabled = false\n"
                                          "train.supervision_mask = none\n"));
  RunOverrides ov;
  ov.out = ws.dir / "baseline";
  ASSERT_TRUE(cmd_train(ws.dir / "baseline.cfg", ov).ok());
  const auto cell = ws.dir / "grid" / "00_baseline";
  EXPECT_EQ(slurp(cell / "metrics.csv"), slurp(ws.dir / "baseline" / "metrics.csv"));
  EXPECT_EQ(slurp(cell / "checkpoint.bin"), slurp(ws.dir / "baseline" / "checkpoint.bin"));
  EXPECT_EQ(slurp(cell / "config.txt"), slurp(ws.dir / "baseline" / "config.txt"));
}

#ifdef RFCR_TOOL_PATH
int run_tool(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(RFCR_TOOL_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

TEST(Tool, ExitCodes) {
  Workspace ws("tool", "train.epochs = 1\n");
  const auto log = ws.dir / "log.txt";
  EXPECT_EQ(run_tool("--help", log), 0);
  EXPECT_EQ(run_tool("", log), kExitUsage);
  EXPECT_EQ(run_tool("frobnicate", log), kExitUsage);
  EXPECT_EQ(run_tool("train --config " + ws.config.string() + " --bogus", log), kExitUsage);
  EXPECT_EQ(run_tool("train --config " + ws.config.string() + " --out " + (ws.dir / "run").string(), log), kExitOk)
      << slurp(log);
  EXPECT_EQ(run_tool("eval " + (ws.dir / "nope.bin").string() + " " + (ws.dir / "data" / "manifest.txt").string() +
                         " --out " + (ws.dir / "ev").string(),
                     log),
            kExitData);
  EXPECT_EQ(run_tool("eval " + (ws.dir / "run" / "checkpoint.bin").string() + " " +
                         (ws.dir / "data" / "manifest.txt").string() + " --out " + (ws.dir / "ev").string(),
                     log),
            kExitOk)
      << slurp(log);
  write_text(ws.dir / "hot.cfg", with(ws.config, "train.learning_rate = 1e6\ntrain.epochs = 3\n"));
  EXPECT_EQ(run_tool("train --config " + (ws.dir / "hot.cfg").string() + " --out " + (ws.dir / "hot").string(), log),
            kExitDiverged);
  EXPECT_EQ(run_tool("synth " + (ws.dir / "scene.spec").string() + " --out " + (ws.dir / "s").string() + " --count 2",
                     log),
            kExitOk);
  EXPECT_EQ(run_tool("rfcc " + (ws.dir / "s" / "scene_0000.xyzl").string() + " --config " + ws.config.string() +
                         " --out " + (ws.dir / "s" / "c.rfcr").string() + " --mode one_hot",
                     log),
            kExitOk)
      << slurp(log);
}
#endif

}  // namespace
}  // namespace rfcr
