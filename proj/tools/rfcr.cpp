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

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rfcr.hpp"

namespace {

int report(const rfcr::CommandOutcome& o) {
  (o.ok() ? std::cout : std::cerr) << o.summary << (o.summary.empty() || o.summary.back() == '\n' ? "" : "\n");
  return o.status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Receptive-field component reasoning for point-cloud segmentation"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  std::string mode;
  std::string mask;
  std::size_t threads = 0;

  auto* synth = app.add_subcommand("synth", "Generate synthetic scenes and a split manifest");
  std::string spec;
  std::size_t count = 1;
  std::size_t val = 0;
  synth->add_option("spec", spec, "Scene spec file")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--count", count, "Number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--val", val, "Scenes assigned to the validation split");
  synth->add_option("--seed", seed, "Override the seed set in the scene file");

  auto* hier = app.add_subcommand("hierarchy", "Build and dump a scene's point hierarchy");
  std::string scene;
  hier->add_option("scene", scene, "Scene (.xyzl)")->required();
  hier->add_option("--config", config, "Run configuration (hierarchy.* keys)");
  hier->add_option("--out", out, "Output container")->required();

  auto* rfcc = app.add_subcommand("rfcc", "Build a hierarchy and its receptive-field component codes");
  rfcc->add_option("scene", scene, "Scene (.xyzl)")->required();
  rfcc->add_option("--config", config, "Run configuration (hierarchy.*, data.classes)");
  rfcc->add_option("--out", out, "Output container")->required();
  rfcc->add_option("--mode", mode, "multi_hot or one_hot")->check(CLI::IsMember({"multi_hot", "one_hot"}));

  auto* trn = app.add_subcommand("train", "Train a network from a run configuration");
  trn->add_option("--config", config, "Run configuration")->required();
  trn->add_option("--out", out, "Output directory (overrides 'out')");
  trn->add_option("--seed", seed, "Override train.seed");
  trn->add_option("--mode", mode, "Override train.target_mode")->check(CLI::IsMember({"multi_hot", "one_hot", "ovu"}));
  trn->add_option("--mask", mask, "Override train.supervision_mask (all, none or a level list)");

  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on scenes");
  std::string checkpoint;
  std::vector<std::string> scenes;
  evl->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  evl->add_option("scenes", scenes, "Scenes (.xyzl) or manifests")->required();
  evl->add_option("--out", out, "Output directory")->required();

  auto* abl = app.add_subcommand("ablate", "Run the ablation grid from a base configuration");
  abl->add_option("--config", config, "Base run configuration")->required();
  abl->add_option("--out", out, "Output directory")->required();
  abl->add_option("--seed", seed, "Override train.seed");
  abl->add_option("--threads", threads, "Parallel runs (default RFCR_THREADS or 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? rfcr::kExitOk : rfcr::kExitUsage;
  }

  auto opt_path = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s); };
  try {
    if (*synth) {
      std::optional<std::uint64_t> s;
      if (synth->count("--seed")) s = seed;
      return report(rfcr::cmd_synth(spec, out, count, val, s));
    }
    if (*hier) return report(rfcr::cmd_hierarchy(scene, opt_path(config), out));
    if (*rfcc) return report(rfcr::cmd_rfcc(scene, opt_path(config), out, mode.empty() ? "multi_hot" : mode));
    rfcr::RunOverrides ov;
    if (*trn) {
      if (trn->count("--seed")) ov.seed = seed;
      if (!mode.empty()) ov.mode = mode;
      if (!mask.empty()) ov.mask = mask;
      if (!out.empty()) ov.out = out;
      return report(rfcr::cmd_train(config, ov));
    }
    if (*evl) {
      std::vector<std::filesystem::path> paths(scenes.begin(), scenes.end());
      return report(rfcr::cmd_eval(checkpoint, paths, out));
    }
    if (*abl) {
      if (abl->count("--seed")) ov.seed = seed;
      std::optional<std::size_t> t;
      if (abl->count("--threads")) t = threads;
      return report(rfcr::cmd_ablate(config, out, ov, t));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return rfcr::exit_status_for(e);
  }
  return rfcr::kExitUsage;
}
