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

// Subcommand implementations behind the `rfcr` tool. Each command returns a
// CommandOutcome instead of exiting, so tests can drive them directly.

#pragma once

#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rfcr/checkpoint.hpp"
#include "rfcr/container.hpp"
#include "rfcr/datasets_io.hpp"
#include "rfcr/error.hpp"
#include "rfcr/evaluation.hpp"
#include "rfcr/hierarchy.hpp"
#include "rfcr/kvconfig.hpp"
#include "rfcr/rfcc.hpp"
#include "rfcr/run_config.hpp"
#include "rfcr/training.hpp"

namespace rfcr {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitDiverged = 3;

struct CommandOutcome {
  int status = kExitOk;
  std::string summary;
  std::vector<fs::path> artifacts;

  bool ok() const { return status == kExitOk; }
};

/// Overrides shared by the commands that read a run configuration.
struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> mask;
  std::optional<fs::path> out;
};

/// Maps a library exception to the tool's exit status.
inline int exit_status_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kExitDiverged;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ArgumentError*>(&e)) return kExitUsage;
  return kExitData;
}

inline CommandOutcome failure(const std::exception& e) {
  CommandOutcome o;
  o.status = exit_status_for(e);
  o.summary = std::string("error: ") + e.what();
  return o;
}

/// Thread count from the flag, then RFCR_THREADS, then 1.
inline std::size_t resolve_threads(std::optional<std::size_t> flag) {
  if (flag) return std::max<std::size_t>(1, *flag);
  if (const char* env = std::getenv("RFCR_THREADS")) {
    try {
      return std::max<std::size_t>(1, KeyValueConfig::to_uint("RFCR_THREADS", env));
    } catch (const Error&) {
      throw ArgumentError(std::string("RFCR_THREADS: not a count: '") + env + "'");
    }
  }
  return 1;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

inline KeyValueConfig load_config_or_default(const std::optional<fs::path>& path) {
  return path ? KeyValueConfig::load(*path) : KeyValueConfig{};
}

inline RunConfig resolve_run_config(KeyValueConfig kv, const RunOverrides& ov) {
  if (ov.seed) kv.set("train.seed", std::to_string(*ov.seed));
  if (ov.mode) kv.set("train.target_mode", *ov.mode);
  if (ov.mask) kv.set("train.supervision_mask", *ov.mask);
  return RunConfig::from_kv(kv);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Writes `count` scenes as scene_NNNN.xyzl and a manifest.txt; the last
/// `val_count` scenes form the validation split.
inline CommandOutcome cmd_synth(const fs::path& spec_path, const fs::path& out_dir, std::size_t count,
                                std::size_t val_count = 0, std::optional<std::uint64_t> seed = {}) {
  try {
    if (count == 0) throw ArgumentError("synth: count must be >= 1");
    if (val_count >= count && count > 1) throw ArgumentError("synth: validation count must leave a training scene");
    auto kv = KeyValueConfig::load(spec_path);
    if (seed) kv.set("seed", std::to_string(*seed));
    const auto spec = parse_scene_spec(kv);
    fs::create_directories(out_dir);
    CommandOutcome o;
    Manifest m;
    std::size_t points = 0;
    for (std::size_t k = 0; k < count; ++k) {
      std::ostringstream name;
      name << "scene_" << std::setw(4) << std::setfill('0') << k << ".xyzl";
      const auto cloud = synth_scene(scene_for_index(spec, k));
      write_xyzl(cloud, out_dir / name.str());
      points += cloud.size();
      (k + val_count >= count && count > 1 ? m.val : m.train).push_back(name.str());
      o.artifacts.push_back(out_dir / name.str());
    }
    write_manifest(m, out_dir / "manifest.txt");
    o.artifacts.push_back(out_dir / "manifest.txt");
    std::ostringstream s;
    s << "wrote " << count << " scenes (" << points << " points; " << m.train.size() << " train, " << m.val.size()
      << " val) to " << out_dir.string();
    o.summary = s.str();
    return o;
  } catch (const std::exception& e) {
    return failure(e);
  }
}

// ---------------------------------------------------------------------------
// hierarchy / rfcc
// ---------------------------------------------------------------------------

inline std::string hierarchy_summary(const Hierarchy& h, const RFCCStack* codes) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "level,points,voxel,radius" << (codes ? ",mean_popcount" : "") << '\n';
  for (std::size_t l = 1; l <= h.num_levels(); ++l) {
    const auto& lv = h.level(l);
    os << l << ',' << lv.positions.size() << ',' << lv.voxel_size << ',' << lv.radius;
    if (codes) os << ',' << codes->mean_popcount(l);
    os << '\n';
  }
  return os.str();
}

inline HierarchyConfig hierarchy_config_from(const std::optional<fs::path>& config) {
  return resolve_run_config(load_config_or_default(config), {}).hierarchy;
}

/// Builds the scene's hierarchy and writes it to `out` plus `out`.summary.csv.
inline CommandOutcome cmd_hierarchy(const fs::path& scene, const std::optional<fs::path>& config, const fs::path& out) {
  try {
    const auto hc = hierarchy_config_from(config);
    const auto cloud = read_xyzl(scene);
    Container c;
    c.hierarchy = build_hierarchy(cloud, hc);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_container(out, c);
    fs::path summary = out;
    summary += ".summary.csv";
    const auto text = hierarchy_summary(*c.hierarchy, nullptr);
    write_text(summary, text);
    CommandOutcome o;
    o.artifacts = {out, summary};
    o.summary = text;
    return o;
  } catch (const std::exception& e) {
    return failure(e);
  }
}

/// Hierarchy plus per-level codes. `mode` is multi_hot or one_hot.
inline CommandOutcome cmd_rfcc(const fs::path& scene, const std::optional<fs::path>& config, const fs::path& out,
                               const std::string& mode = "multi_hot") {
  try {
    if (mode != "multi_hot" && mode != "one_hot") throw ArgumentError("rfcc: --mode must be multi_hot or one_hot");
    const auto rc = resolve_run_config(load_config_or_default(config), {});
    const auto cloud = read_xyzl(scene);
    const std::size_t C = rc.data.num_classes;
    Container c;
    c.hierarchy = build_hierarchy(cloud, rc.hierarchy);
    c.codes = mode == "multi_hot" ? gen_targets(*c.hierarchy, cloud.labels, C) : majority_code(*c.hierarchy, cloud.labels, C);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_container(out, c);
    fs::path summary = out;
    summary += ".summary.csv";
    const auto text = hierarchy_summary(*c.hierarchy, &*c.codes);
    write_text(summary, text);
    CommandOutcome o;
    o.artifacts = {out, summary};
    o.summary = text;
    return o;
  } catch (const std::exception& e) {
    return failure(e);
  }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline std::string loss_report_text(const TrainRecord& record) {
  std::ostringstream os;
  os << std::setprecision(12);
  if (record.epochs.empty()) {
    os << "epochs = 0\n";
    return os.str();
  }
  const auto& e = record.epochs.back();
  os << "epoch = " << e.epoch << '\n';
  os << "lambda1 = " << e.loss.lambda1 << '\n';
  os << "lambda2 = " << e.loss.lambda2 << '\n';
  os << "L_S = " << e.loss.semantic << '\n';
  os << "L_R = " << e.loss.reasoning << '\n';
  for (std::size_t l = 2; l < e.loss.reasoning_levels.size(); ++l) {
    os << "L_R." << l << " = " << e.loss.reasoning_levels[l] << '\n';
  }
  os << "L_F = " << e.loss.densification << '\n';
  for (std::size_t l = 2; l < e.loss.densification_levels.size(); ++l) {
    os << "L_F." << l << " = " << e.loss.densification_levels[l] << '\n';
  }
  os << "total = " << e.loss.total << '\n';
  os << "val_mIoU = " << format_metric(e.val_miou) << '\n';
  os << "rfcc_oa = " << format_metric(e.rfcc_oa) << '\n';
  os << "below_0.1 = " << format_metric(e.below_small_fraction) << '\n';
  return os.str();
}

/// Result of one fully specified training run, as written by `train`.
struct RunSummary {
  std::string config_hash;
  bool diverged = false;
  std::string error;
  TrainRecord record;
};

/// Trains `rc` and writes config.txt, metrics.csv, report.txt and (unless the
/// run diverged) checkpoint.bin into `out_dir`.
inline RunSummary run_training(const RunConfig& rc, const fs::path& config_dir, const fs::path& out_dir,
                               std::vector<fs::path>* artifacts = nullptr) {
  RunSummary s;
  s.config_hash = rc.hash();
  const auto data = load_data(rc, config_dir);
  fs::create_directories(out_dir);
  auto emit = [&](const fs::path& p) {
    if (artifacts) artifacts->push_back(p);
  };
  write_text(out_dir / "config.txt", "# hash " + s.config_hash + "\n" + rc.to_kv().canonical());
  emit(out_dir / "config.txt");
  std::optional<TrainResult> result;
  try {
    result = train(data, rc.hierarchy, rc.network, rc.train);
    s.record = result->record;
  } catch (const TrainingDiverged& e) {
    s.diverged = true;
    s.error = e.what();
    s.record = e.record();
  }
  write_text(out_dir / "metrics.csv", metrics_csv(s.record));
  emit(out_dir / "metrics.csv");
  std::string report = loss_report_text(s.record);
  if (s.diverged) report += "aborted = " + s.error + "\n";
  write_text(out_dir / "report.txt", report);
  emit(out_dir / "report.txt");
  if (result) {
    Checkpoint ck;
    ck.network = result->network;
    ck.hierarchy = rc.hierarchy;
    ck.target_mode = rc.train.target_mode;
    ck.supervision_mask = rc.train.supervision_mask;
    ck.rfcc_threshold = rc.train.rfcc_threshold;
    ck.params = std::move(result->params);
    save_checkpoint(out_dir / "checkpoint.bin", ck);
    emit(out_dir / "checkpoint.bin");
  }
  return s;
}

inline fs::path resolve_out(const RunConfig& rc, const fs::path& config_dir, const RunOverrides& ov) {
  if (ov.out) return *ov.out;
  if (rc.out.empty()) throw ArgumentError("no output directory: pass --out or set 'out' in the config");
  fs::path p(rc.out);
  return p.is_relative() ? config_dir / p : p;
}

inline CommandOutcome cmd_train(const fs::path& config, const RunOverrides& ov = {}) {
  try {
    const auto rc = resolve_run_config(KeyValueConfig::load(config), ov);
    const auto dir = config.parent_path();
    const auto out = resolve_out(rc, dir, ov);
    CommandOutcome o;
    const auto s = run_training(rc, dir, out, &o.artifacts);
    std::ostringstream msg;
    msg << "config " << s.config_hash << ", " << s.record.epochs.size() << " epochs";
    if (!s.record.epochs.empty()) {
      const auto& e = s.record.epochs.back();
      msg << ", total loss " << std::setprecision(6) << e.loss.total << ", val mIoU " << format_metric(e.val_miou);
    }
    if (s.diverged) {
      o.status = kExitDiverged;
      msg << "; " << s.error;
    }
    o.summary = msg.str();
    return o;
  } catch (const std::exception& e) {
    return failure(e);
  }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Scenes named directly (.xyzl) or through a manifest (every listed scene).
inline std::vector<std::pair<std::string, PointCloud>> load_eval_scenes(const std::vector<fs::path>& inputs) {
  std::vector<std::pair<std::string, PointCloud>> scenes;
  for (const auto& in : inputs) {
    if (in.extension() == ".xyzl") {
      scenes.emplace_back(in.stem().string(), read_xyzl(in));
      continue;
    }
    const auto m = read_manifest(in);
    for (const auto* list : {&m.train, &m.val}) {
      for (const auto& p : *list) {
        const auto full = p.is_relative() ? in.parent_path() / p : p;
        scenes.emplace_back(full.stem().string(), read_xyzl(full));
      }
    }
  }
  if (scenes.empty()) throw InputError("eval: no scenes given");
  return scenes;
}

/// Writes iou.csv, metrics.txt, histogram.csv and one <scene>.pred.ply per
/// scene. Nothing is written unless every input loads.
inline CommandOutcome cmd_eval(const fs::path& checkpoint, const std::vector<fs::path>& scenes_in, const fs::path& out_dir) {
  try {
    const auto ck = load_checkpoint(checkpoint);
    const auto named = load_eval_scenes(scenes_in);
    const auto tc = ck.eval_config();
    std::vector<PreparedScene> scenes;
    for (const auto& [name, cloud] : named) {
      scenes.push_back(prepare_scene(cloud, ck.hierarchy, ck.network.num_classes, tc.target_mode));
    }
    const auto ev = evaluate(ck.params, ck.network, scenes, tc, true);

    fs::create_directories(out_dir);
    CommandOutcome o;
    std::ostringstream iou;
    iou << std::setprecision(12) << "class,iou\n";
    for (std::size_t c = 0; c < ck.network.num_classes; ++c) {
      iou << c << ',' << format_metric(ev.iou ? ev.iou->per_class[c] : std::nullopt) << '\n';
    }
    write_text(out_dir / "iou.csv", iou.str());
    o.artifacts.push_back(out_dir / "iou.csv");

    std::ostringstream metrics;
    metrics << "scenes = " << scenes.size() << '\n';
    metrics << "points = " << ev.confusion.total() << '\n';
    metrics << "accuracy = " << format_metric(ev.confusion.total() ? std::optional(ev.confusion.accuracy()) : std::nullopt)
            << '\n';
    metrics << "mIoU = " << format_metric(ev.iou ? std::optional(ev.iou->mean) : std::nullopt) << '\n';
    metrics << "rfcc_oa = " << format_metric(ev.rfcc_oa) << '\n';
    metrics << "below_0.1 = "
            << format_metric(ev.magnitudes ? std::optional(ev.magnitudes->below_fraction()) : std::nullopt) << '\n';
    write_text(out_dir / "metrics.txt", metrics.str());
    o.artifacts.push_back(out_dir / "metrics.txt");

    std::ostringstream hist;
    hist << "level,lower,upper,count\n";
    if (ev.magnitudes) {
      const auto& h = *ev.magnitudes;
      for (std::size_t l = 0; l < h.counts.size(); ++l) {
        if (h.totals[l] == 0) continue;
        for (std::size_t b = 0; b < h.counts[l].size(); ++b) {
          hist << l << ',' << h.edges[b] << ',';
          if (b + 1 == h.counts[l].size()) {
            hist << "inf";
          } else {
            hist << h.edges[b + 1];
          }
          hist << ',' << h.counts[l][b] << '\n';
        }
      }
    }
    write_text(out_dir / "histogram.csv", hist.str());
    o.artifacts.push_back(out_dir / "histogram.csv");

    const auto palette = default_palette();
    for (std::size_t k = 0; k < named.size(); ++k) {
      const auto path = out_dir / (named[k].first + ".pred.ply");
      write_ply_labeled(named[k].second, ev.predictions[k], palette, ck.network.num_classes, path);
      o.artifacts.push_back(path);
    }
    o.summary = metrics.str();
    return o;
  } catch (const std::exception& e) {
    return failure(e);
  }
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblationCell {
  std::string name;
  RunConfig config;
};

/// Seven fixed modes, then one row per level left out of the supervision mask.
inline std::vector<AblationCell> ablation_grid(const RunConfig& base) {
  std::vector<AblationCell> grid;
  const std::size_t L = base.hierarchy.levels;
  auto full = base;
  full.train.lambda1 = base.train.lambda1;
  full.train.supervision_mask = parse_mask("all", L);
  full.train.target_mode = TargetMode::multi_hot;
  full.train.head_side = HeadSide::decoder;
  full.train.fd_enabled = true;
  auto add = [&](std::string name, RunConfig rc) {
    rc.network = network_config_for(rc.network, rc.train);
    grid.push_back({std::move(name), std::move(rc)});
  };

  auto baseline = full;
  baseline.train.lambda1 = 0.0;
  baseline.train.lambda2 = 0.0;
  baseline.train.fd_enabled = false;
  baseline.train.supervision_mask.clear();
  add("baseline", baseline);

  auto rfcr = full;
  rfcr.train.fd_enabled = false;
  add("rfcr", rfcr);
  add("rfcr_fd", full);

  auto one_hot = full;
  one_hot.train.target_mode = TargetMode::one_hot;
  add("one_hot_fd", one_hot);

  auto ovu = full;
  ovu.train.target_mode = TargetMode::ovu;
  add("ovu_fd", ovu);

  auto encoder = full;
  encoder.train.head_side = HeadSide::encoder;
  add("encoder_fd", encoder);

  auto fd_only = full;
  fd_only.train.lambda1 = 0.0;
  fd_only.train.supervision_mask.clear();
  add("fd_only", fd_only);

  for (std::size_t drop = 2; drop <= L; ++drop) {
    auto cell = full;
    cell.train.supervision_mask.clear();
    for (std::size_t l = 2; l <= L; ++l) {
      if (l != drop) cell.train.supervision_mask.push_back(l);
    }
    add("without_level_" + std::to_string(drop), cell);
  }
  return grid;
}

/// Runs every grid cell into out_dir/<row>_<name>/ and writes ablation.csv.
/// A failed cell is recorded in the table and the grid continues.
inline CommandOutcome cmd_ablate(const fs::path& config, const fs::path& out_dir, const RunOverrides& ov = {},
                                 std::optional<std::size_t> threads = {}) {
  try {
    RunOverrides base_ov = ov;
    base_ov.mode.reset();
    base_ov.mask.reset();
    const auto base = resolve_run_config(KeyValueConfig::load(config), base_ov);
    const auto grid = ablation_grid(base);
    const auto dir = config.parent_path();
    const std::size_t workers = std::min(resolve_threads(threads), grid.size());

    std::vector<RunSummary> results(grid.size());
    std::vector<fs::path> cell_dirs(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
      std::ostringstream name;
      name << std::setw(2) << std::setfill('0') << k << '_' << grid[k].name;
      cell_dirs[k] = out_dir / name.str();
    }
    std::mutex mu;
    std::size_t next = 0;
    auto worker = [&] {
      for (;;) {
        std::size_t k;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next == grid.size()) return;
          k = next++;
        }
        try {
          results[k] = run_training(grid[k].config, dir, cell_dirs[k]);
        } catch (const std::exception& e) {
          results[k].config_hash = grid[k].config.hash();
          results[k].error = e.what();
        }
      }
    };
    if (workers <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }

    std::ostringstream table;
    table << std::setprecision(12);
    table << "row,mode,config_hash,status,target_mode,head_side,supervision_mask,fd,lambda1,lambda2,epochs,"
             "L_S,L_R,L_F,total,mIoU,rfcc_oa,below_0.1\n";
    std::size_t failed = 0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const auto& t = grid[k].config.train;
      const auto& r = results[k];
      std::string status = "ok";
      if (r.diverged) {
        status = "diverged";
      } else if (!r.error.empty()) {
        status = "error";
      }
      failed += status != "ok";
      table << k << ',' << grid[k].name << ',' << r.config_hash << ',' << status << ',' << to_string(t.target_mode) << ','
            << to_string(t.head_side) << ',' << mask_to_string(t.supervision_mask) << ','
            << (t.fd_enabled ? "on" : "off") << ',' << t.lambda1 << ',' << t.effective_lambda2() << ','
            << r.record.epochs.size();
      if (r.record.epochs.empty()) {
        table << ",NA,NA,NA,NA,NA,NA,NA\n";
        continue;
      }
      const auto& e = r.record.epochs.back();
      table << ',' << e.loss.semantic << ',' << e.loss.reasoning << ',' << e.loss.densification << ',' << e.loss.total
            << ',' << format_metric(e.val_miou) << ',' << format_metric(e.rfcc_oa) << ','
            << format_metric(e.below_small_fraction) << '\n';
    }
    fs::create_directories(out_dir);
    write_text(out_dir / "ablation.csv", table.str());
    CommandOutcome o;
    o.artifacts.push_back(out_dir / "ablation.csv");
    for (const auto& d : cell_dirs) o.artifacts.push_back(d);
    std::ostringstream msg;
    msg << grid.size() << " runs, " << failed << " failed; table in " << (out_dir / "ablation.csv").string();
    o.summary = msg.str();
    return o;
  } catch (const std::exception& e) {
    return failure(e);
  }
}

}  // namespace rfcr
