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

#pragma once

#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rfcr/datasets_io.hpp"
#include "rfcr/hierarchy.hpp"
#include "rfcr/kvconfig.hpp"
#include "rfcr/network.hpp"
#include "rfcr/training.hpp"

namespace rfcr {

/// Where training scenes come from: a manifest of .xyzl files or the
/// generated mini-room benchmark.
struct DataConfig {
  std::string manifest;
  std::size_t train_scenes = 20;
  std::size_t val_scenes = 5;
  /// Defaults to the run seed.
  std::optional<std::uint64_t> seed;
  double density = 50.0;
  std::size_t num_classes = 5;
};

inline std::vector<std::size_t> default_widths(std::size_t levels) {
  static constexpr std::size_t kPattern[] = {16, 32, 32, 48, 48, 64, 64, 96};
  std::vector<std::size_t> w;
  for (std::size_t l = 0; l < levels; ++l) w.push_back(kPattern[std::min<std::size_t>(l, 7)]);
  return w;
}

inline const char* to_string(HeadSide s) { return s == HeadSide::decoder ? "decoder" : "encoder"; }
inline const char* to_string(FdAttachment a) { return a == FdAttachment::identity ? "identity" : "perceptron"; }

inline HeadSide parse_head_side(const std::string& s) {
  if (s == "decoder") return HeadSide::decoder;
  if (s == "encoder") return HeadSide::encoder;
  throw ConfigError("unknown head side '" + s + "' (expected decoder or encoder)");
}

inline FdAttachment parse_fd_attachment(const std::string& s) {
  if (s == "identity") return FdAttachment::identity;
  if (s == "perceptron") return FdAttachment::perceptron;
  throw ConfigError("unknown fd attachment '" + s + "' (expected identity or perceptron)");
}

/// "all", "none", or a list of levels.
inline std::vector<std::size_t> parse_mask(const std::string& s, std::size_t levels) {
  std::vector<std::size_t> out;
  if (s == "all") {
    for (std::size_t l = 2; l <= levels; ++l) out.push_back(l);
    return out;
  }
  if (s == "none" || s.empty()) return out;
  for (const auto& tok : KeyValueConfig::split_list(s)) {
    out.push_back(KeyValueConfig::to_uint("train.supervision_mask", tok));
  }
  return out;
}

inline std::string mask_to_string(const std::vector<std::size_t>& mask) {
  if (mask.empty()) return "none";
  std::string s;
  for (std::size_t n = 0; n < mask.size(); ++n) s += (n ? "," : "") + std::to_string(mask[n]);
  return s;
}

struct RunConfig {
  DataConfig data;
  HierarchyConfig hierarchy;
  NetworkConfig network;
  TrainConfig train;
  std::string out;

  std::uint64_t data_seed() const { return data.seed.value_or(train.seed); }

  static RunConfig from_kv(const KeyValueConfig& kv) {
    RunConfig rc;
    auto& d = rc.data;
    d.manifest = kv.get("data.manifest", "");
    d.train_scenes = kv.get_uint("data.train_scenes", d.train_scenes);
    d.val_scenes = kv.get_uint("data.val_scenes", d.val_scenes);
    if (kv.has("data.seed")) d.seed = kv.get_uint("data.seed", 0);
    d.density = kv.get_double("data.density", d.density);
    d.num_classes = kv.get_uint("data.classes", d.num_classes);

    auto& h = rc.hierarchy;
    h.levels = kv.get_uint("hierarchy.levels", h.levels);
    h.base_voxel = kv.get_double("hierarchy.base_voxel", h.base_voxel);
    h.voxel_ratio = kv.get_double("hierarchy.voxel_ratio", h.voxel_ratio);
    h.radius_factor = kv.get_double("hierarchy.radius_factor", h.radius_factor);
    h.neighbor_cap = kv.get_uint("hierarchy.neighbor_cap", h.neighbor_cap);
    h.validate();

    auto& n = rc.network;
    n.levels = h.levels;
    auto widths = [&](const std::string& key) {
      auto v = kv.get_uint_list(key, {});
      if (v.empty()) return default_widths(h.levels);
      return std::vector<std::size_t>(v.begin(), v.end());
    };
    n.encoder_widths = widths("network.encoder_widths");
    n.decoder_widths = widths("network.decoder_widths");
    n.head_hidden = kv.get_uint("network.head_hidden", n.head_hidden);
    n.leaky_slope = kv.get_double("network.leaky_slope", n.leaky_slope);
    n.num_classes = d.num_classes;

    auto& t = rc.train;
    t.lambda1 = kv.get_double("train.lambda1", t.lambda1);
    t.lambda2 = kv.get_double("train.lambda2", t.lambda2);
    t.learning_rate = kv.get_double("train.learning_rate", t.learning_rate);
    t.momentum = kv.get_double("train.momentum", t.momentum);
    t.weight_decay = kv.get_double("train.weight_decay", t.weight_decay);
    t.lr_decay = kv.get_double("train.lr_decay", t.lr_decay);
    t.lr_decay_every = kv.get_uint("train.lr_decay_every", t.lr_decay_every);
    t.epochs = kv.get_uint("train.epochs", t.epochs);
    t.batch_size = kv.get_uint("train.batch_size", t.batch_size);
    t.seed = kv.get_uint("train.seed", t.seed);
    t.supervision_mask = parse_mask(kv.get("train.supervision_mask", "all"), h.levels);
    t.target_mode = parse_target_mode(kv.get("train.target_mode", "multi_hot"));
    t.head_side = parse_head_side(kv.get("train.head_side", "decoder"));
    t.fd_enabled = kv.get_bool("train.fd_enabled", t.fd_enabled);
    t.fd_attachment = parse_fd_attachment(kv.get("train.fd_attachment", "identity"));
    t.rfcc_threshold = kv.get_double("train.rfcc_threshold", t.rfcc_threshold);
    t.divergence_limit = kv.get_double("train.divergence_limit", t.divergence_limit);
    rc.out = kv.get("out", "");
    kv.reject_unused();

    rc.network = network_config_for(rc.network, rc.train);
    rc.network.validate();
    rc.train.validate(h.levels);
    return rc;
  }

  /// Every setting written out explicitly, so a saved file reproduces the run.
  KeyValueConfig to_kv() const {
    KeyValueConfig kv;
    auto num = [](double v) {
      std::ostringstream os;
      os << std::setprecision(17) << v;
      return os.str();
    };
    auto list = [](const std::vector<std::size_t>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    if (!data.manifest.empty()) kv.set("data.manifest", data.manifest);
    kv.set("data.train_scenes", std::to_string(data.train_scenes));
    kv.set("data.val_scenes", std::to_string(data.val_scenes));
    if (data.seed) kv.set("data.seed", std::to_string(*data.seed));
    kv.set("data.density", num(data.density));
    kv.set("data.classes", std::to_string(data.num_classes));
    kv.set("hierarchy.levels", std::to_string(hierarchy.levels));
    kv.set("hierarchy.base_voxel", num(hierarchy.base_voxel));
    kv.set("hierarchy.voxel_ratio", num(hierarchy.voxel_ratio));
    kv.set("hierarchy.radius_factor", num(hierarchy.radius_factor));
    kv.set("hierarchy.neighbor_cap", std::to_string(hierarchy.neighbor_cap));
    kv.set("network.encoder_widths", list(network.encoder_widths));
    kv.set("network.decoder_widths", list(network.decoder_widths));
    kv.set("network.head_hidden", std::to_string(network.head_hidden));
    kv.set("network.leaky_slope", num(network.leaky_slope));
    kv.set("train.lambda1", num(train.lambda1));
    kv.set("train.lambda2", num(train.lambda2));
    kv.set("train.learning_rate", num(train.learning_rate));
    kv.set("train.momentum", num(train.momentum));
    kv.set("train.weight_decay", num(train.weight_decay));
    kv.set("train.lr_decay", num(train.lr_decay));
    kv.set("train.lr_decay_every", std::to_string(train.lr_decay_every));
    kv.set("train.epochs", std::to_string(train.epochs));
    kv.set("train.batch_size", std::to_string(train.batch_size));
    kv.set("train.seed", std::to_string(train.seed));
    kv.set("train.supervision_mask", mask_to_string(train.supervision_mask));
    kv.set("train.target_mode", to_string(train.target_mode));
    kv.set("train.head_side", to_string(train.head_side));
    kv.set("train.fd_enabled", train.fd_enabled ? "true" : "false");
    kv.set("train.fd_attachment", to_string(train.fd_attachment));
    kv.set("train.rfcc_threshold", num(train.rfcc_threshold));
    kv.set("train.divergence_limit", num(train.divergence_limit));
    if (!out.empty()) kv.set("out", out);
    return kv;
  }

  /// Provenance hash over every setting except the output directory.
  std::string hash() const {
    RunConfig copy = *this;
    copy.out.clear();
    return hex64(fnv1a64(copy.to_kv().canonical()));
  }
};

/// Loads the configured training data.
inline DatasetSplit load_data(const RunConfig& rc, const std::filesystem::path& config_dir = {}) {
  if (!rc.data.manifest.empty()) {
    std::filesystem::path m(rc.data.manifest);
    if (m.is_relative() && !config_dir.empty()) m = config_dir / m;
    return load_manifest(m);
  }
  if (rc.data.num_classes != mini_room_class_names().size()) {
    throw ConfigError("the generated benchmark has " + std::to_string(mini_room_class_names().size()) + " classes");
  }
  MiniRoomOptions opt;
  opt.density = rc.data.density;
  return make_mini_room_split(rc.data.train_scenes, rc.data.val_scenes, rc.data_seed() * 1000, opt);
}

}  // namespace rfcr
