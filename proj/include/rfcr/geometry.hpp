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
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rfcr/error.hpp"

namespace rfcr {

using Vec3 = std::array<double, 3>;
using Label = std::int32_t;

inline constexpr Label kIgnoreLabel = -1;

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

inline bool is_finite(const Vec3& p) {
  return std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]);
}

/// Class count, class names and the sentinel used for unlabeled points.
struct LabelSpec {
  std::size_t num_classes = 0;
  std::vector<std::string> names;
  Label ignore_value = kIgnoreLabel;

  static LabelSpec with_classes(std::size_t c, Label ignore = kIgnoreLabel) {
    LabelSpec spec;
    spec.num_classes = c;
    spec.ignore_value = ignore;
    for (std::size_t k = 0; k < c; ++k) spec.names.push_back("class" + std::to_string(k));
    spec.validate();
    return spec;
  }

  void validate() const {
    if (num_classes < 2) throw ArgumentError("LabelSpec: need at least 2 classes");
    if (names.size() != num_classes) throw ArgumentError("LabelSpec: names/classes size mismatch");
    std::set<std::string> unique(names.begin(), names.end());
    if (unique.size() != names.size()) throw ArgumentError("LabelSpec: class names must be distinct");
    if (ignore_value >= 0 && static_cast<std::size_t>(ignore_value) < num_classes) {
      throw ArgumentError("LabelSpec: ignore value collides with a class index");
    }
  }

  bool is_ignored(Label y) const { return y == ignore_value; }
};

struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Label> labels;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }

  void add(const Vec3& p, Label y) {
    positions.push_back(p);
    labels.push_back(y);
  }

  /// Throws InputError if the cloud breaks an invariant with respect to `spec`.
  void validate(const LabelSpec& spec) const {
    if (positions.size() != labels.size()) throw InputError("PointCloud: positions/labels length mismatch");
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (!is_finite(positions[i])) {
        throw InputError("PointCloud: non-finite coordinate at point " + std::to_string(i));
      }
      const Label y = labels[i];
      if (spec.is_ignored(y)) continue;
      if (y < 0 || static_cast<std::size_t>(y) >= spec.num_classes) {
        throw InputError("PointCloud: label " + std::to_string(y) + " out of range at point " +
                         std::to_string(i));
      }
    }
  }
};

/// Compressed per-query neighbor lists: indices of query q are
/// `indices[offsets[q] .. offsets[q + 1])`.
struct NeighborLists {
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> indices;
  std::size_t support_count = 0;

  std::size_t query_count() const { return offsets.size() - 1; }

  std::span<const std::uint32_t> operator[](std::size_t q) const {
    return {indices.data() + offsets[q], offsets[q + 1] - offsets[q]};
  }

  void push(std::span<const std::uint32_t> list) {
    indices.insert(indices.end(), list.begin(), list.end());
    offsets.push_back(static_cast<std::uint32_t>(indices.size()));
  }

  /// Self-only neighborhoods over n points.
  static NeighborLists identity(std::size_t n) {
    NeighborLists nl;
    nl.support_count = n;
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t self[1] = {i};
      nl.push(self);
    }
    return nl;
  }

  friend bool operator==(const NeighborLists&, const NeighborLists&) = default;
};

struct Subsampled {
  std::vector<Vec3> positions;
  /// voxel_assignment[c] lists the fine indices (ascending) merged into coarse point c.
  std::vector<std::vector<std::uint32_t>> voxel_assignment;
};

namespace detail {

using VoxelKey = std::array<std::int64_t, 3>;

inline VoxelKey voxel_key(const Vec3& p, double cell) {
  return {static_cast<std::int64_t>(std::floor(p[0] / cell)),
          static_cast<std::int64_t>(std::floor(p[1] / cell)),
          static_cast<std::int64_t>(std::floor(p[2] / cell))};
}

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto v : k) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ULL;
      h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
  }
};

inline void require_finite(std::span<const Vec3> pts, const char* what) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!is_finite(pts[i])) {
      throw InputError(std::string(what) + ": non-finite coordinate at point " + std::to_string(i));
    }
  }
}

}  // namespace detail

/// Merges all points sharing an integer voxel into their barycenter. Coarse
/// points come out in ascending lexicographic order of voxel keys.
inline Subsampled grid_subsample(std::span<const Vec3> positions, double voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
    throw ArgumentError("grid_subsample: voxel_size must be positive");
  }
  if (positions.empty()) throw ArgumentError("grid_subsample: empty cloud");
  detail::require_finite(positions, "grid_subsample");

  std::map<detail::VoxelKey, std::vector<std::uint32_t>> buckets;
  for (std::uint32_t i = 0; i < positions.size(); ++i) {
    buckets[detail::voxel_key(positions[i], voxel_size)].push_back(i);
  }
  Subsampled out;
  out.positions.reserve(buckets.size());
  out.voxel_assignment.reserve(buckets.size());
  for (auto& [key, members] : buckets) {
    Vec3 c{0.0, 0.0, 0.0};
    for (auto i : members) {
      for (int d = 0; d < 3; ++d) c[d] += positions[i][d];
    }
    for (int d = 0; d < 3; ++d) c[d] /= static_cast<double>(members.size());
    out.positions.push_back(c);
    out.voxel_assignment.push_back(std::move(members));
  }
  return out;
}

inline Subsampled grid_subsample(const PointCloud& cloud, double voxel_size) {
  return grid_subsample(std::span<const Vec3>(cloud.positions), voxel_size);
}

/// Uniform hash grid over a fixed support set.
class SpatialHash {
 public:
  SpatialHash(std::span<const Vec3> support, double cell) : support_(support), cell_(cell) {
    if (support.empty()) throw ArgumentError("SpatialHash: empty support");
    if (!(cell > 0.0)) throw ArgumentError("SpatialHash: cell size must be positive");
    detail::require_finite(support, "SpatialHash");
    lo_.fill(std::numeric_limits<std::int64_t>::max());
    hi_.fill(std::numeric_limits<std::int64_t>::min());
    for (std::uint32_t i = 0; i < support.size(); ++i) {
      const auto key = detail::voxel_key(support[i], cell_);
      cells_[key].push_back(i);
      for (int d = 0; d < 3; ++d) {
        lo_[d] = std::min(lo_[d], key[d]);
        hi_[d] = std::max(hi_[d], key[d]);
      }
    }
  }

  /// Support indices within `radius` of q, ordered by (distance, index), at most `cap`.
  void radius_query(const Vec3& q, double radius, std::size_t cap,
                    std::vector<std::pair<double, std::uint32_t>>& scratch,
                    std::vector<std::uint32_t>& out) const {
    scratch.clear();
    out.clear();
    const double r2 = radius * radius;
    const auto reach = static_cast<std::int64_t>(std::ceil(radius / cell_));
    const auto center = detail::voxel_key(q, cell_);
    for (std::int64_t dx = -reach; dx <= reach; ++dx) {
      for (std::int64_t dy = -reach; dy <= reach; ++dy) {
        for (std::int64_t dz = -reach; dz <= reach; ++dz) {
          const detail::VoxelKey key{center[0] + dx, center[1] + dy, center[2] + dz};
          auto it = cells_.find(key);
          if (it == cells_.end()) continue;
          for (auto j : it->second) {
            const double d2 = squared_distance(q, support_[j]);
            if (d2 <= r2) scratch.emplace_back(d2, j);
          }
        }
      }
    }
    std::sort(scratch.begin(), scratch.end());
    const std::size_t n = std::min(cap, scratch.size());
    for (std::size_t k = 0; k < n; ++k) out.push_back(scratch[k].second);
  }

  /// Nearest support index; ties go to the smallest index.
  std::uint32_t nearest(const Vec3& q) const {
    const auto center = detail::voxel_key(q, cell_);
    std::int64_t max_ring = 0;
    for (int d = 0; d < 3; ++d) {
      max_ring = std::max({max_ring, std::abs(center[d] - lo_[d]), std::abs(hi_[d] - center[d])});
    }
    double best_d2 = std::numeric_limits<double>::infinity();
    std::uint32_t best = 0;
    bool found = false;
    for (std::int64_t ring = 0; ring <= max_ring; ++ring) {
      if (found) {
        // Every point in this ring is at least (ring - 1) cells away.
        const double bound = static_cast<double>(ring - 1) * cell_;
        if (bound > 0.0 && bound * bound > best_d2) break;
      }
      visit_ring(center, ring, [&](std::uint32_t j) {
        const double d2 = squared_distance(q, support_[j]);
        if (d2 < best_d2 || (d2 == best_d2 && j < best)) {
          best_d2 = d2;
          best = j;
          found = true;
        }
      });
    }
    return best;
  }

 private:
  template <typename F>
  void visit_ring(const detail::VoxelKey& c, std::int64_t ring, F&& f) const {
    for (std::int64_t dx = -ring; dx <= ring; ++dx) {
      for (std::int64_t dy = -ring; dy <= ring; ++dy) {
        const bool edge = std::abs(dx) == ring || std::abs(dy) == ring;
        const std::int64_t step = edge ? 1 : 2 * ring;
        for (std::int64_t dz = -ring; dz <= ring; dz += (ring == 0 ? 1 : step)) {
          auto it = cells_.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (it == cells_.end()) continue;
          for (auto j : it->second) f(j);
        }
      }
    }
  }

  std::span<const Vec3> support_;
  double cell_;
  std::unordered_map<detail::VoxelKey, std::vector<std::uint32_t>, detail::VoxelKeyHash> cells_;
  detail::VoxelKey lo_{};
  detail::VoxelKey hi_{};
};

/// For each query, support indices within `radius`, nearest first (index
/// tie-break), truncated to `cap`. An empty ball falls back to the single
/// nearest support point so no list is ever empty.
inline NeighborLists radius_neighbors(std::span<const Vec3> queries, std::span<const Vec3> support,
                                      double radius, std::size_t cap) {
  if (support.empty()) throw ArgumentError("radius_neighbors: empty support");
  if (!(radius > 0.0) || !std::isfinite(radius)) throw ArgumentError("radius_neighbors: radius must be positive");
  if (cap < 1) throw ArgumentError("radius_neighbors: cap must be >= 1");
  detail::require_finite(queries, "radius_neighbors");

  SpatialHash grid(support, radius);
  NeighborLists out;
  out.support_count = support.size();
  out.indices.reserve(queries.size() * std::min<std::size_t>(cap, 16));
  std::vector<std::pair<double, std::uint32_t>> scratch;
  std::vector<std::uint32_t> list;
  for (const auto& q : queries) {
    grid.radius_query(q, radius, cap, scratch, list);
    if (list.empty()) list.push_back(grid.nearest(q));
    out.push(list);
  }
  return out;
}

namespace detail {

inline double nn_cell_size(std::span<const Vec3> support) {
  Vec3 lo = support[0];
  Vec3 hi = support[0];
  for (const auto& p : support) {
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }
  }
  const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  if (!(extent > 0.0)) return 1.0;
  return extent / std::max(1.0, std::cbrt(static_cast<double>(support.size())));
}

}  // namespace detail

/// Index of the closest support point for every query; ties to the smallest index.
inline std::vector<std::uint32_t> nearest_neighbor(std::span<const Vec3> queries,
                                                   std::span<const Vec3> support) {
  if (support.empty()) throw ArgumentError("nearest_neighbor: empty support");
  detail::require_finite(queries, "nearest_neighbor");
  SpatialHash grid(support, detail::nn_cell_size(support));
  std::vector<std::uint32_t> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(grid.nearest(q));
  return out;
}

}  // namespace rfcr
