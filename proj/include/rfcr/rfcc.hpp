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

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rfcr/binary_io.hpp"
#include "rfcr/error.hpp"
#include "rfcr/geometry.hpp"
#include "rfcr/hierarchy.hpp"

namespace rfcr {

/// One C-bit code per point, packed into 64-bit words.
class CodeMatrix {
 public:
  CodeMatrix() = default;
  CodeMatrix(std::size_t points, std::size_t classes)
      : points_(points), classes_(classes), words_((classes + 63) / 64), bits_(points * words_, 0) {}

  std::size_t points() const { return points_; }
  std::size_t classes() const { return classes_; }
  std::size_t words() const { return words_; }

  bool test(std::size_t i, std::size_t k) const { return (bits_[i * words_ + k / 64] >> (k % 64)) & 1ULL; }

  void set(std::size_t i, std::size_t k) {
    if (k >= classes_) throw ArgumentError("CodeMatrix: bit " + std::to_string(k) + " out of range");
    bits_[i * words_ + k / 64] |= 1ULL << (k % 64);
  }

  std::span<const std::uint64_t> row(std::size_t i) const { return {bits_.data() + i * words_, words_}; }
  std::span<std::uint64_t> row(std::size_t i) { return {bits_.data() + i * words_, words_}; }

  std::size_t popcount(std::size_t i) const {
    std::size_t n = 0;
    for (auto w : row(i)) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  /// True when every bit of row i is also set in `other` row j.
  bool is_subset(std::size_t i, const CodeMatrix& other, std::size_t j) const {
    auto a = row(i);
    auto b = other.row(j);
    for (std::size_t w = 0; w < words_; ++w) {
      if ((a[w] & ~b[w]) != 0) return false;
    }
    return true;
  }

  const std::vector<std::uint64_t>& raw() const { return bits_; }
  std::vector<std::uint64_t>& raw() { return bits_; }

  friend bool operator==(const CodeMatrix&, const CodeMatrix&) = default;

 private:
  std::size_t points_ = 0;
  std::size_t classes_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> bits_;
};

/// Target codes for levels 1..L.
struct RFCCStack {
  std::size_t num_classes = 0;
  std::vector<CodeMatrix> levels;  // levels[l - 1] holds level l

  std::size_t num_levels() const { return levels.size(); }

  const CodeMatrix& level(std::size_t l) const {
    if (l < 1 || l > levels.size()) throw ArgumentError("RFCCStack: level out of range");
    return levels[l - 1];
  }

  double mean_popcount(std::size_t l) const {
    const auto& c = level(l);
    if (c.points() == 0) return 0.0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < c.points(); ++i) total += c.popcount(i);
    return static_cast<double>(total) / static_cast<double>(c.points());
  }

  friend bool operator==(const RFCCStack&, const RFCCStack&) = default;
};

inline void check_labels(std::span<const Label> labels, std::size_t num_classes, Label ignore) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Label y = labels[i];
    if (y == ignore) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw InputError("label " + std::to_string(y) + " at point " + std::to_string(i) +
                       " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

/// Level-1 codes: one-hot of the label, all-zero for ignored points.
inline CodeMatrix init_codes(std::span<const Label> labels, std::size_t num_classes,
                             Label ignore = kIgnoreLabel) {
  check_labels(labels, num_classes, ignore);
  CodeMatrix codes(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != ignore) codes.set(i, static_cast<std::size_t>(labels[i]));
  }
  return codes;
}

/// code(i) = OR of prev(j) over j in neighbors[i].
inline CodeMatrix or_pool(const CodeMatrix& prev, const NeighborLists& neighbors) {
  if (prev.points() != neighbors.support_count) {
    throw ArgumentError("or_pool: " + std::to_string(prev.points()) + " codes for support of " +
                        std::to_string(neighbors.support_count));
  }
  CodeMatrix out(neighbors.query_count(), prev.classes());
  for (std::size_t i = 0; i < neighbors.query_count(); ++i) {
    auto dst = out.row(i);
    for (auto j : neighbors[i]) {
      auto src = prev.row(j);
      for (std::size_t w = 0; w < dst.size(); ++w) dst[w] |= src[w];
    }
  }
  return out;
}

inline RFCCStack gen_targets(const Hierarchy& h, std::span<const Label> labels, std::size_t num_classes,
                             Label ignore = kIgnoreLabel) {
  if (labels.size() != h.size(1)) throw ArgumentError("gen_targets: label count does not match level 1");
  RFCCStack stack;
  stack.num_classes = num_classes;
  stack.levels.push_back(init_codes(labels, num_classes, ignore));
  for (std::size_t l = 2; l <= h.num_levels(); ++l) {
    stack.levels.push_back(or_pool(stack.levels.back(), h.level(l).pool_neighbors));
  }
  return stack;
}

/// One-hot variant: each code is the majority label of the receptive field
/// (ties to the smaller class, all-ignored fields give the zero code).
inline RFCCStack majority_code(const Hierarchy& h, std::span<const Label> labels, std::size_t num_classes,
                               Label ignore = kIgnoreLabel) {
  if (labels.size() != h.size(1)) throw ArgumentError("majority_code: label count does not match level 1");
  RFCCStack stack;
  stack.num_classes = num_classes;
  stack.levels.push_back(init_codes(labels, num_classes, ignore));
  ReceptiveFieldTable fields(h);
  std::vector<std::size_t> counts(num_classes);
  for (std::size_t l = 2; l <= h.num_levels(); ++l) {
    CodeMatrix codes(h.size(l), num_classes);
    for (std::size_t i = 0; i < h.size(l); ++i) {
      std::fill(counts.begin(), counts.end(), 0);
      for (auto p : fields.get(l, i)) {
        if (labels[p] != ignore) ++counts[static_cast<std::size_t>(labels[p])];
      }
      std::size_t best = 0;
      for (std::size_t k = 1; k < num_classes; ++k) {
        if (counts[k] > counts[best]) best = k;
      }
      if (counts[best] > 0) codes.set(i, best);
    }
    stack.levels.push_back(std::move(codes));
  }
  return stack;
}

// Binary section layout: tag "RFCCODES", u64 classes, u32 level count, then
// per level: u64 points, u64 words per code, points*words u64 bit words.
inline void write_rfcc_section(std::ostream& os, const RFCCStack& stack) {
  binio::put_tag(os, "RFCCODES");
  binio::put_u64(os, stack.num_classes);
  binio::put_u32(os, static_cast<std::uint32_t>(stack.num_levels()));
  for (const auto& lv : stack.levels) {
    binio::put_u64(os, lv.points());
    binio::put_u64(os, lv.words());
    for (auto w : lv.raw()) binio::put_u64(os, w);
  }
}

inline RFCCStack read_rfcc_section(binio::Reader& in) {
  in.expect_tag("RFCCODES");
  RFCCStack stack;
  stack.num_classes = in.count(1u << 16);
  const auto nlev = in.u32();
  if (nlev > 64) throw FormatError("rfcc: bad level count");
  for (std::uint32_t l = 0; l < nlev; ++l) {
    const auto n = in.count(1ULL << 32);
    const auto words = in.u64();
    CodeMatrix codes(n, stack.num_classes);
    if (words != codes.words()) throw FormatError("rfcc: word count does not match class count");
    for (auto& w : codes.raw()) w = in.u64();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = stack.num_classes; k < words * 64; ++k) {
        if (codes.test(i, k)) throw FormatError("rfcc: bit set beyond class count");
      }
    }
    stack.levels.push_back(std::move(codes));
  }
  return stack;
}

}  // namespace rfcr
