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

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "rfcr/error.hpp"
#include "rfcr/geometry.hpp"
#include "rfcr/kvconfig.hpp"
#include "rfcr/rng.hpp"

namespace rfcr {

enum class ShapeKind { plane, box, sphere, cylinder };

inline const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::plane: return "plane";
    case ShapeKind::box: return "box";
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cylinder: return "cylinder";
  }
  return "?";
}

inline ShapeKind parse_shape_kind(const std::string& s) {
  if (s == "plane") return ShapeKind::plane;
  if (s == "box") return ShapeKind::box;
  if (s == "sphere") return ShapeKind::sphere;
  if (s == "cylinder") return ShapeKind::cylinder;
  throw ConfigError("unknown primitive kind '" + s + "'");
}

/// A labeled surface primitive.
///  - plane: axis-aligned rectangle (before yaw) centered at `center`; exactly
///    one scale component is zero and gives the normal axis, the other two are
///    full side lengths.
///  - box: full side lengths, surface sampled by area.
///  - sphere: scale[0] is the radius.
///  - cylinder: scale[0] radius, scale[2] height; lateral surface plus top cap,
///    `center` is the center of the bottom circle.
struct Primitive {
  ShapeKind kind = ShapeKind::plane;
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 scale{1.0, 1.0, 0.0};
  double yaw = 0.0;
  Label label = 0;
  std::size_t points = 100;
};

struct SceneSpec {
  Vec3 room{4.0, 4.0, 2.0};
  std::vector<Primitive> primitives;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::size_t num_classes = 2;
  /// Unlabeled points scattered uniformly in the room box.
  std::size_t clutter = 0;

  void validate() const {
    if (num_classes < 2) throw ConfigError("SceneSpec: need at least 2 classes");
    if (!(noise >= 0.0)) throw ConfigError("SceneSpec: noise must be >= 0");
    for (std::size_t n = 0; n < primitives.size(); ++n) {
      const auto& p = primitives[n];
      const std::string where = "SceneSpec primitive " + std::to_string(n) + ": ";
      if (p.label < 0 || static_cast<std::size_t>(p.label) >= num_classes) {
        throw ConfigError(where + "class id out of range");
      }
      if (p.points < 1) throw ConfigError(where + "needs at least one point");
      int zeros = 0;
      for (double s : p.scale) {
        if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError(where + "scale must be finite and >= 0");
        zeros += s == 0.0;
      }
      switch (p.kind) {
        case ShapeKind::plane:
          if (zeros != 1) throw ConfigError(where + "degenerate plane (need exactly one zero scale)");
          break;
        case ShapeKind::box:
          if (zeros != 0) throw ConfigError(where + "degenerate box");
          break;
        case ShapeKind::sphere:
          if (p.scale[0] == 0.0) throw ConfigError(where + "degenerate sphere");
          break;
        case ShapeKind::cylinder:
          if (p.scale[0] == 0.0 || p.scale[2] == 0.0) throw ConfigError(where + "degenerate cylinder");
          break;
      }
    }
  }
};

namespace detail {

inline Vec3 rotate_yaw(const Vec3& v, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]};
}

inline Vec3 sample_surface(const Primitive& p, Rng& rng) {
  Vec3 local{0.0, 0.0, 0.0};
  switch (p.kind) {
    case ShapeKind::plane: {
      for (int d = 0; d < 3; ++d) local[d] = p.scale[d] == 0.0 ? 0.0 : rng.uniform(-0.5, 0.5) * p.scale[d];
      break;
    }
    case ShapeKind::box: {
      const double a[3] = {p.scale[1] * p.scale[2], p.scale[0] * p.scale[2], p.scale[0] * p.scale[1]};
      const double total = a[0] + a[1] + a[2];
      double u = rng.uniform() * total;
      int axis = 0;
      while (axis < 2 && u >= a[axis]) u -= a[axis++];
      const double side = rng.uniform() < 0.5 ? -0.5 : 0.5;
      for (int d = 0; d < 3; ++d) local[d] = d == axis ? side * p.scale[d] : rng.uniform(-0.5, 0.5) * p.scale[d];
      break;
    }
    case ShapeKind::sphere: {
      Vec3 n{rng.normal(), rng.normal(), rng.normal()};
      double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      while (len < 1e-12) {
        n = {rng.normal(), rng.normal(), rng.normal()};
        len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      }
      for (int d = 0; d < 3; ++d) local[d] = n[d] / len * p.scale[0];
      return {p.center[0] + local[0], p.center[1] + local[1], p.center[2] + local[2]};
    }
    case ShapeKind::cylinder: {
      const double r = p.scale[0];
      const double hgt = p.scale[2];
      const double lateral = 2.0 * std::numbers::pi * r * hgt;
      const double cap = std::numbers::pi * r * r;
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      if (rng.uniform() * (lateral + cap) < lateral) {
        local = {r * std::cos(theta), r * std::sin(theta), rng.uniform(0.0, hgt)};
      } else {
        const double rr = r * std::sqrt(rng.uniform());
        local = {rr * std::cos(theta), rr * std::sin(theta), hgt};
      }
      break;
    }
  }
  const Vec3 w = rotate_yaw(local, p.yaw);
  return {p.center[0] + w[0], p.center[1] + w[1], p.center[2] + w[2]};
}

}  // namespace detail

/// Samples every primitive's surface with optional Gaussian jitter.
/// Primitive k draws from its own stream so edits to one primitive leave the
/// others unchanged.
inline PointCloud synth_scene(const SceneSpec& spec) {
  spec.validate();
  PointCloud cloud;
  for (std::size_t k = 0; k < spec.primitives.size(); ++k) {
    const auto& prim = spec.primitives[k];
    Rng rng(derive_seed(spec.seed, k));
    for (std::size_t n = 0; n < prim.points; ++n) {
      Vec3 p = detail::sample_surface(prim, rng);
      if (spec.noise > 0.0) {
        for (auto& c : p) c += spec.noise * rng.normal();
      }
      cloud.add(p, prim.label);
    }
  }
  Rng clutter_rng(derive_seed(spec.seed, 1000003));
  for (std::size_t n = 0; n < spec.clutter; ++n) {
    cloud.add({clutter_rng.uniform(0.0, spec.room[0]), clutter_rng.uniform(0.0, spec.room[1]),
               clutter_rng.uniform(0.0, spec.room[2])},
              kIgnoreLabel);
  }
  return cloud;
}

/// Class layout of the synthetic mini-room benchmark.
inline std::vector<std::string> mini_room_class_names() { return {"floor", "wall", "box", "sphere", "cylinder"}; }

struct MiniRoomOptions {
  Vec3 room{4.0, 4.0, 1.5};
  double density = 50.0;  // points per square meter of surface
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  double noise = 0.005;
  std::size_t clutter = 10;
};

/// Random room: floor, two walls, and 2-4 objects of random kind placed on
/// the floor without overlapping footprints.
inline SceneSpec random_mini_room(std::uint64_t seed, const MiniRoomOptions& opt = {}) {
  Rng rng(derive_seed(seed, 77));
  SceneSpec spec;
  spec.room = opt.room;
  spec.noise = opt.noise;
  spec.seed = seed;
  spec.num_classes = 5;
  spec.clutter = opt.clutter;
  const double W = opt.room[0];
  const double D = opt.room[1];
  const double H = opt.room[2];
  auto count = [&](double area) { return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(area * opt.density))); };

  spec.primitives.push_back({ShapeKind::plane, {W / 2, D / 2, 0.0}, {W, D, 0.0}, 0.0, 0, count(W * D)});
  spec.primitives.push_back({ShapeKind::plane, {0.0, D / 2, H / 2}, {0.0, D, H}, 0.0, 1, count(D * H)});
  spec.primitives.push_back({ShapeKind::plane, {W / 2, 0.0, H / 2}, {W, 0.0, H}, 0.0, 1, count(W * H)});

  const std::size_t n_obj = opt.min_objects + rng.below(opt.max_objects - opt.min_objects + 1);
  std::vector<std::array<double, 3>> placed;  // x, y, footprint radius
  for (std::size_t o = 0; o < n_obj; ++o) {
    const auto kind = static_cast<int>(rng.below(3));
    Primitive p;
    double footprint = 0.0;
    if (kind == 0) {
      p.kind = ShapeKind::box;
      p.label = 2;
      p.scale = {rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0), rng.uniform(0.3, 0.9)};
      p.yaw = rng.uniform(0.0, std::numbers::pi);
      footprint = 0.5 * std::hypot(p.scale[0], p.scale[1]);
    } else if (kind == 1) {
      p.kind = ShapeKind::sphere;
      p.label = 3;
      p.scale = {rng.uniform(0.25, 0.5), 0.0, 0.0};
      footprint = p.scale[0];
    } else {
      p.kind = ShapeKind::cylinder;
      p.label = 4;
      p.scale = {rng.uniform(0.15, 0.35), 0.0, rng.uniform(0.5, 1.2)};
      footprint = p.scale[0];
    }
    double x = 0.0;
    double y = 0.0;
    for (int attempt = 0; attempt < 50; ++attempt) {
      x = rng.uniform(0.3 + footprint, W - footprint - 0.1);
      y = rng.uniform(0.3 + footprint, D - footprint - 0.1);
      bool clear = true;
      for (const auto& q : placed) clear = clear && std::hypot(x - q[0], y - q[1]) > footprint + q[2] + 0.1;
      if (clear) break;
    }
    placed.push_back({x, y, footprint});
    double area = 0.0;
    if (p.kind == ShapeKind::box) {
      p.center = {x, y, p.scale[2] / 2};
      area = 2.0 * (p.scale[0] * p.scale[1] + p.scale[0] * p.scale[2] + p.scale[1] * p.scale[2]);
    } else if (p.kind == ShapeKind::sphere) {
      p.center = {x, y, p.scale[0]};
      area = 4.0 * std::numbers::pi * p.scale[0] * p.scale[0];
    } else {
      p.center = {x, y, 0.0};
      area = 2.0 * std::numbers::pi * p.scale[0] * p.scale[2] + std::numbers::pi * p.scale[0] * p.scale[0];
    }
    p.points = count(area);
    spec.primitives.push_back(p);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Scene spec files
// ---------------------------------------------------------------------------

/// Reads a scene spec. Keys: room, noise, seed, classes, clutter and any
/// number of `primitive = kind cx cy cz sx sy sz yaw class points` lines.
/// `layout = random` (with optional `density`, `min_objects`, `max_objects`)
/// asks for generated mini-rooms instead of listed primitives.
struct SceneSpecFile {
  SceneSpec spec;
  bool random_layout = false;
  MiniRoomOptions room_options;
};

inline SceneSpecFile parse_scene_spec(const KeyValueConfig& kv) {
  SceneSpecFile f;
  auto& s = f.spec;
  const auto room = kv.get_double_list("room", {s.room[0], s.room[1], s.room[2]});
  if (room.size() != 3) throw ConfigError("room: expected three extents");
  s.room = {room[0], room[1], room[2]};
  s.noise = kv.get_double("noise", 0.0);
  s.seed = kv.get_uint("seed", 0);
  s.num_classes = kv.get_uint("classes", 5);
  s.clutter = kv.get_uint("clutter", 0);
  const auto layout = kv.get("layout", "fixed");
  if (layout != "fixed" && layout != "random") throw ConfigError("layout must be 'fixed' or 'random'");
  f.random_layout = layout == "random";
  f.room_options.room = s.room;
  f.room_options.noise = s.noise;
  f.room_options.clutter = s.clutter;
  f.room_options.density = kv.get_double("density", f.room_options.density);
  f.room_options.min_objects = kv.get_uint("min_objects", f.room_options.min_objects);
  f.room_options.max_objects = kv.get_uint("max_objects", f.room_options.max_objects);
  if (f.room_options.min_objects > f.room_options.max_objects) throw ConfigError("min_objects > max_objects");
  for (const auto& line : kv.all("primitive")) {
    const auto tok = KeyValueConfig::split_list(line);
    if (tok.size() != 10) throw ConfigError("primitive: expected 'kind cx cy cz sx sy sz yaw class points'");
    Primitive p;
    p.kind = parse_shape_kind(tok[0]);
    for (int d = 0; d < 3; ++d) {
      p.center[d] = KeyValueConfig::to_double("primitive", tok[1 + d]);
      p.scale[d] = KeyValueConfig::to_double("primitive", tok[4 + d]);
    }
    p.yaw = KeyValueConfig::to_double("primitive", tok[7]);
    p.label = static_cast<Label>(KeyValueConfig::to_uint("primitive", tok[8]));
    p.points = KeyValueConfig::to_uint("primitive", tok[9]);
    s.primitives.push_back(p);
  }
  kv.reject_unused();
  if (!f.random_layout) {
    if (s.primitives.empty()) throw ConfigError("scene spec lists no primitives");
    s.validate();
  }
  return f;
}

/// Scene `index` of a spec file: fixed layouts re-sample the same primitives
/// with seed + index, random layouts draw a fresh mini-room.
inline SceneSpec scene_for_index(const SceneSpecFile& f, std::uint64_t index) {
  if (f.random_layout) {
    SceneSpec s = random_mini_room(f.spec.seed + index, f.room_options);
    return s;
  }
  SceneSpec s = f.spec;
  s.seed = f.spec.seed + index;
  return s;
}

// ---------------------------------------------------------------------------
// .xyzl and PLY
// ---------------------------------------------------------------------------

/// One point per line: "x y z label", label -1 marks an unlabeled point.
inline void write_xyzl(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << std::setprecision(9);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.positions[i];
    const Label y = cloud.labels[i] < 0 ? -1 : cloud.labels[i];
    os << p[0] << ' ' << p[1] << ' ' << p[2] << ' ' << y << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

inline PointCloud parse_xyzl(std::istream& is) {
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    Vec3 p;
    long long y = 0;
    if (!(ls >> p[0] >> p[1] >> p[2] >> y)) throw ParseError("expected 'x y z label'", line_no);
    std::string rest;
    if (ls >> rest) throw ParseError("trailing data '" + rest + "'", line_no);
    if (!is_finite(p)) throw ParseError("non-finite coordinate", line_no);
    if (y < -1 || y > 1'000'000) throw ParseError("label out of range", line_no);
    cloud.add(p, static_cast<Label>(y));
  }
  if (cloud.empty()) throw InputError("empty point cloud");
  return cloud;
}

inline PointCloud read_xyzl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return parse_xyzl(is);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

using Rgb = std::array<std::uint8_t, 3>;

inline std::vector<Rgb> default_palette() {
  return {{{174, 199, 232}}, {{152, 223, 138}}, {{31, 119, 180}},  {{255, 187, 120}}, {{188, 189, 34}},
          {{140, 86, 75}},   {{255, 152, 150}}, {{214, 39, 40}},   {{197, 176, 213}}, {{148, 103, 189}},
          {{196, 156, 148}}, {{23, 190, 207}},  {{247, 182, 210}}, {{219, 219, 141}}, {{255, 127, 14}},
          {{158, 218, 229}}, {{44, 160, 44}},   {{112, 128, 144}}, {{227, 119, 194}}, {{82, 84, 163}}};
}

inline constexpr Rgb kIgnoreColor{128, 128, 128};

/// ASCII PLY with x, y, z and the palette color of each label.
inline void write_ply_labeled(std::span<const Vec3> positions, std::span<const Label> labels,
                              std::span<const Rgb> palette, std::size_t num_classes, const std::filesystem::path& path) {
  if (positions.size() != labels.size()) throw ArgumentError("write_ply_labeled: positions/labels length mismatch");
  if (palette.size() < num_classes) throw ArgumentError("write_ply_labeled: palette shorter than class count");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "ply\nformat ascii 1.0\ncomment labeled point cloud\n"
     << "element vertex " << positions.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n"
     << "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  os << std::setprecision(9);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Label y = labels[i];
    Rgb c = kIgnoreColor;
    if (y >= 0 && static_cast<std::size_t>(y) < num_classes) c = palette[static_cast<std::size_t>(y)];
    const auto& p = positions[i];
    os << p[0] << ' ' << p[1] << ' ' << p[2] << ' ' << int(c[0]) << ' ' << int(c[1]) << ' ' << int(c[2]) << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

inline void write_ply_labeled(const PointCloud& cloud, std::span<const Label> labels, std::span<const Rgb> palette,
                              std::size_t num_classes, const std::filesystem::path& path) {
  write_ply_labeled(cloud.positions, labels, palette, num_classes, path);
}

// ---------------------------------------------------------------------------
// Splits and manifests
// ---------------------------------------------------------------------------

struct DatasetSplit {
  std::vector<PointCloud> train;
  std::vector<PointCloud> val;
  std::vector<std::string> train_names;
  std::vector<std::string> val_names;
};

/// Manifest lines are "train <path>" or "val <path>", paths relative to the
/// manifest's directory.
struct Manifest {
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> val;
};

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& p : m.train) os << "train " << p.generic_string() << '\n';
  for (const auto& p : m.val) os << "val " << p.generic_string() << '\n';
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string split;
    std::string file;
    if (!(ls >> split)) continue;
    if (!(ls >> file)) throw ParseError("manifest: expected '<split> <path>'", line_no);
    if (split == "train") {
      m.train.emplace_back(file);
    } else if (split == "val") {
      m.val.emplace_back(file);
    } else {
      throw ParseError("manifest: unknown split '" + split + "'", line_no);
    }
  }
  return m;
}

inline DatasetSplit load_manifest(const std::filesystem::path& path) {
  const auto m = read_manifest(path);
  const auto base = path.parent_path();
  DatasetSplit split;
  for (const auto& p : m.train) {
    split.train.push_back(read_xyzl(base / p));
    split.train_names.push_back(p.stem().string());
  }
  for (const auto& p : m.val) {
    split.val.push_back(read_xyzl(base / p));
    split.val_names.push_back(p.stem().string());
  }
  return split;
}

/// The synthetic benchmark: `train` + `val` mini-rooms drawn from consecutive seeds.
inline DatasetSplit make_mini_room_split(std::size_t train, std::size_t val, std::uint64_t seed,
                                         const MiniRoomOptions& opt = {}) {
  DatasetSplit split;
  for (std::size_t k = 0; k < train + val; ++k) {
    auto cloud = synth_scene(random_mini_room(seed + k, opt));
    const auto name = "room_" + std::to_string(seed + k);
    if (k < train) {
      split.train.push_back(std::move(cloud));
      split.train_names.push_back(name);
    } else {
      split.val.push_back(std::move(cloud));
      split.val_names.push_back(name);
    }
  }
  return split;
}

}  // namespace rfcr
