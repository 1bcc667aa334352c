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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rfcr/binary_io.hpp"
#include "rfcr/error.hpp"
#include "rfcr/geometry.hpp"

namespace rfcr {

struct HierarchyConfig {
  std::size_t levels = 5;
  double base_voxel = 0.2;
  double voxel_ratio = 2.0;
  double radius_factor = 2.5;
  std::size_t neighbor_cap = 26;

  void validate() const {
    if (levels < 2) throw ConfigError("HierarchyConfig: levels must be >= 2");
    if (!(base_voxel > 0.0)) throw ConfigError("HierarchyConfig: base_voxel must be > 0");
    if (!(voxel_ratio > 1.0)) throw ConfigError("HierarchyConfig: voxel_ratio must be > 1");
    if (!(radius_factor >= 1.0)) throw ConfigError("HierarchyConfig: radius_factor must be >= 1");
    if (neighbor_cap < 1) throw ConfigError("HierarchyConfig: neighbor_cap must be >= 1");
  }

  /// Grid size used to produce level l (l >= 2).
  double voxel(std::size_t l) const { return base_voxel * std::pow(voxel_ratio, static_cast<double>(l) - 2.0); }
  double radius(std::size_t l) const { return radius_factor * voxel(l); }

  friend bool operator==(const HierarchyConfig&, const HierarchyConfig&) = default;
};

/// One level P^l. For level 1 only `positions` is populated.
struct HierarchyLevel {
  std::vector<Vec3> positions;
  /// Queries are points of this level, support is the previous level.
  NeighborLists pool_neighbors;
  /// For each point of the previous level, its nearest point in this level.
  std::vector<std::uint32_t> upsample_map;
  double voxel_size = 0.0;
  double radius = 0.0;

  std::size_t size() const { return positions.size(); }

  friend bool operator==(const HierarchyLevel&, const HierarchyLevel&) = default;
};

/// Levels are addressed 1..L; level 1 is the input cloud.
class Hierarchy {
 public:
  Hierarchy() = default;
  explicit Hierarchy(std::vector<HierarchyLevel> levels) : levels_(std::move(levels)) {}

  std::size_t num_levels() const { return levels_.size(); }

  const HierarchyLevel& level(std::size_t l) const {
    if (l < 1 || l > levels_.size()) {
      throw ArgumentError("Hierarchy: level " + std::to_string(l) + " out of range 1.." +
                          std::to_string(levels_.size()));
    }
    return levels_[l - 1];
  }

  std::size_t size(std::size_t l) const { return level(l).size(); }

  friend bool operator==(const Hierarchy&, const Hierarchy&) = default;

 private:
  std::vector<HierarchyLevel> levels_;
};

/// Builds the level stack. The neighbor lists stored here are the single
/// source of truth for both feature pooling and code generation.
inline Hierarchy build_hierarchy(std::span<const Vec3> positions, const HierarchyConfig& config) {
  config.validate();
  if (positions.empty()) throw ArgumentError("build_hierarchy: empty cloud");

  std::vector<HierarchyLevel> levels;
  HierarchyLevel base;
  base.positions.assign(positions.begin(), positions.end());
  detail::require_finite(base.positions, "build_hierarchy");
  levels.push_back(std::move(base));

  for (std::size_t l = 2; l <= config.levels; ++l) {
    const auto& prev = levels.back().positions;
    HierarchyLevel next;
    next.voxel_size = config.voxel(l);
    next.radius = config.radius(l);
    next.positions = grid_subsample(prev, next.voxel_size).positions;
    if (next.positions.empty()) break;
    next.pool_neighbors = radius_neighbors(next.positions, prev, next.radius, config.neighbor_cap);
    next.upsample_map = nearest_neighbor(prev, next.positions);
    levels.push_back(std::move(next));
  }
  return Hierarchy(std::move(levels));
}

inline Hierarchy build_hierarchy(const PointCloud& cloud, const HierarchyConfig& config) {
  return build_hierarchy(std::span<const Vec3>(cloud.positions), config);
}

/// Memoized receptive fields: the level-1 indices reachable from a point by
/// expanding pooling neighborhoods down to the input level.
class ReceptiveFieldTable {
 public:
  explicit ReceptiveFieldTable(const Hierarchy& h) : h_(h), memo_(h.num_levels() + 1) {
    for (std::size_t l = 2; l <= h.num_levels(); ++l) memo_[l].resize(h.size(l));
    done_.resize(h.num_levels() + 1);
    for (std::size_t l = 2; l <= h.num_levels(); ++l) done_[l].assign(h.size(l), false);
  }

  /// Sorted, duplicate-free level-1 indices.
  const std::vector<std::uint32_t>& get(std::size_t l, std::size_t i) {
    if (l < 1 || l > h_.num_levels()) throw ArgumentError("receptive_field: level out of range");
    if (i >= h_.size(l)) throw ArgumentError("receptive_field: index out of range");
    if (l == 1) {
      single_.assign(1, static_cast<std::uint32_t>(i));
      return single_;
    }
    if (!done_[l][i]) {
      std::vector<std::uint32_t> acc;
      for (auto j : h_.level(l).pool_neighbors[i]) {
        if (l == 2) {
          acc.push_back(j);
        } else {
          const auto& child = get(l - 1, j);
          acc.insert(acc.end(), child.begin(), child.end());
        }
      }
      std::sort(acc.begin(), acc.end());
      acc.erase(std::unique(acc.begin(), acc.end()), acc.end());
      memo_[l][i] = std::move(acc);
      done_[l][i] = true;
    }
    return memo_[l][i];
  }

 private:
  const Hierarchy& h_;
  std::vector<std::vector<std::vector<std::uint32_t>>> memo_;
  std::vector<std::vector<bool>> done_;
  std::vector<std::uint32_t> single_;
};

inline std::vector<std::uint32_t> receptive_field(const Hierarchy& h, std::size_t l, std::size_t i) {
  if (l < 2 || l > h.num_levels()) throw ArgumentError("receptive_field: level must be in 2..L");
  if (i >= h.size(l)) throw ArgumentError("receptive_field: index out of range");
  ReceptiveFieldTable table(h);
  return table.get(l, i);
}

/// Maps every level-1 point to the level-l point it copies from when
/// predictions are upsampled level by level through the upsample maps.
inline std::vector<std::uint32_t> upsample_chain(const Hierarchy& h, std::size_t l) {
  if (l < 1 || l > h.num_levels()) throw ArgumentError("upsample_chain: level out of range");
  std::vector<std::uint32_t> idx(h.size(1));
  for (std::uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t m = 2; m <= l; ++m) {
    const auto& up = h.level(m).upsample_map;
    for (auto& v : idx) v = up[v];
  }
  return idx;
}

// Binary section layout (little-endian):
//   tag "HIERARCH", u32 level count, then per level l:
//     u64 n, n*3 f64 positions, f64 voxel, f64 radius
//     if l >= 2: u64 support count, u64 nnz, (n+1) u32 offsets, nnz u32 indices,
//                u64 upsample length, u32 entries
inline void write_hierarchy_section(std::ostream& os, const Hierarchy& h) {
  binio::put_tag(os, "HIERARCH");
  binio::put_u32(os, static_cast<std::uint32_t>(h.num_levels()));
  for (std::size_t l = 1; l <= h.num_levels(); ++l) {
    const auto& lv = h.level(l);
    binio::put_u64(os, lv.size());
    for (const auto& p : lv.positions) {
      for (double c : p) binio::put_f64(os, c);
    }
    binio::put_f64(os, lv.voxel_size);
    binio::put_f64(os, lv.radius);
    if (l >= 2) {
      binio::put_u64(os, lv.pool_neighbors.support_count);
      binio::put_u64(os, lv.pool_neighbors.indices.size());
      for (auto o : lv.pool_neighbors.offsets) binio::put_u32(os, o);
      for (auto j : lv.pool_neighbors.indices) binio::put_u32(os, j);
      binio::put_u64(os, lv.upsample_map.size());
      for (auto j : lv.upsample_map) binio::put_u32(os, j);
    }
  }
}

inline Hierarchy read_hierarchy_section(binio::Reader& in) {
  constexpr std::uint64_t kMax = 1ULL << 32;
  in.expect_tag("HIERARCH");
  const auto nlev = in.u32();
  if (nlev < 1 || nlev > 64) throw FormatError("hierarchy: bad level count");
  std::vector<HierarchyLevel> levels(nlev);
  for (std::size_t l = 1; l <= nlev; ++l) {
    auto& lv = levels[l - 1];
    const auto n = in.count(kMax);
    lv.positions.resize(n);
    for (auto& p : lv.positions) {
      for (double& c : p) c = in.f64();
    }
    lv.voxel_size = in.f64();
    lv.radius = in.f64();
    if (l >= 2) {
      lv.pool_neighbors.support_count = in.count(kMax);
      if (lv.pool_neighbors.support_count != levels[l - 2].size()) {
        throw FormatError("hierarchy: support count does not match previous level");
      }
      const auto nnz = in.count(kMax);
      lv.pool_neighbors.offsets.resize(n + 1);
      for (auto& o : lv.pool_neighbors.offsets) o = in.u32();
      lv.pool_neighbors.indices.resize(nnz);
      for (auto& j : lv.pool_neighbors.indices) {
        j = in.u32();
        if (j >= lv.pool_neighbors.support_count) throw FormatError("hierarchy: neighbor index out of range");
      }
      if (lv.pool_neighbors.offsets.front() != 0 || lv.pool_neighbors.offsets.back() != nnz) {
        throw FormatError("hierarchy: inconsistent neighbor offsets");
      }
      const auto m = in.count(kMax);
      if (m != levels[l - 2].size()) throw FormatError("hierarchy: upsample map length mismatch");
      lv.upsample_map.resize(m);
      for (auto& j : lv.upsample_map) {
        j = in.u32();
        if (j >= n) throw FormatError("hierarchy: upsample index out of range");
      }
    }
  }
  return Hierarchy(std::move(levels));
}

}  // namespace rfcr
