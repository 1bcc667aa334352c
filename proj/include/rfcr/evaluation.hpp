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
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rfcr/error.hpp"
#include "rfcr/geometry.hpp"
#include "rfcr/losses.hpp"
#include "rfcr/matrix.hpp"
#include "rfcr/rfcc.hpp"

namespace rfcr {

/// counts[truth][prediction]; ignored points are never added.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes)
      : c_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return c_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * c_ + pred]; }

  void add(std::span<const Label> truth, std::span<const Label> pred, Label ignore = kIgnoreLabel) {
    if (truth.size() != pred.size()) throw ArgumentError("ConfusionMatrix: truth/prediction length mismatch");
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == ignore) continue;
      if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= c_ || pred[i] < 0 ||
          static_cast<std::size_t>(pred[i]) >= c_) {
        throw InputError("ConfusionMatrix: label out of range at point " + std::to_string(i));
      }
      ++counts_[static_cast<std::size_t>(truth[i]) * c_ + static_cast<std::size_t>(pred[i])];
    }
  }

  void merge(const ConfusionMatrix& other) {
    if (other.c_ != c_) throw ArgumentError("ConfusionMatrix: class count mismatch");
    for (std::size_t n = 0; n < counts_.size(); ++n) counts_[n] += other.counts_[n];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }

  double accuracy() const {
    const auto t = total();
    if (t == 0) return 0.0;
    std::uint64_t diag = 0;
    for (std::size_t k = 0; k < c_; ++k) diag += at(k, k);
    return static_cast<double>(diag) / static_cast<double>(t);
  }

 private:
  std::size_t c_;
  std::vector<std::uint64_t> counts_;
};

struct IouResult {
  /// Empty optional for classes absent from both truth and prediction.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

/// IoU_c = TP / (TP + FP + FN); undefined classes are left out of the mean.
inline IouResult miou(const ConfusionMatrix& cm) {
  const std::size_t C = cm.num_classes();
  IouResult r;
  r.per_class.resize(C);
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < C; ++k) {
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    for (std::size_t j = 0; j < C; ++j) {
      if (j == k) continue;
      fp += cm.at(j, k);
      fn += cm.at(k, j);
    }
    const std::uint64_t tp = cm.at(k, k);
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class[k] = iou;
    sum += iou;
    ++defined;
  }
  if (defined == 0) throw MetricError("miou: every class is undefined");
  r.mean = sum / static_cast<double>(defined);
  return r;
}

/// Bit-level agreement counts, kept separate so scenes can be pooled.
struct BitAccuracy {
  std::uint64_t correct = 0;
  std::uint64_t total = 0;

  double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
  void merge(const BitAccuracy& o) {
    correct += o.correct;
    total += o.total;
  }
};

/// Counts (l, i, k) with (prob >= threshold) == target bit over supervised levels.
inline BitAccuracy rfcc_bit_accuracy(const PredictionStack& preds, const RFCCStack& targets, const LevelMask& mask,
                                     double threshold = 0.5) {
  const std::size_t L = preds.num_levels();
  if (targets.num_levels() != L || mask.size() != L + 1) throw ArgumentError("rfcc_accuracy: level mismatch");
  BitAccuracy acc;
  for (std::size_t l = 2; l <= L; ++l) {
    if (!mask[l]) continue;
    const Matrix& p = preds.code_probs[l];
    const CodeMatrix& g = targets.level(l);
    if (p.rows != g.points() || p.cols != g.classes()) {
      throw ArgumentError("rfcc_accuracy: shape mismatch at level " + std::to_string(l));
    }
    for (std::size_t i = 0; i < p.rows; ++i) {
      for (std::size_t k = 0; k < p.cols; ++k) {
        acc.correct += ((p(i, k) >= threshold) == g.test(i, k));
        ++acc.total;
      }
    }
  }
  return acc;
}

inline double rfcc_accuracy(const PredictionStack& preds, const RFCCStack& targets, const LevelMask& mask,
                            double threshold = 0.5) {
  return rfcc_bit_accuracy(preds, targets, mask, threshold).value();
}

/// Histogram of |feature| per level. Bin b covers [edges[b], edges[b+1]);
/// values at or beyond the last edge land in the last bin.
struct MagnitudeHistogram {
  std::vector<double> edges;
  std::vector<std::vector<std::uint64_t>> counts;  // by level number
  std::vector<std::uint64_t> below_small;          // |v| < small_threshold, by level
  std::vector<std::uint64_t> totals;
  double small_threshold = 0.1;

  void merge(const MagnitudeHistogram& o) {
    if (o.edges != edges || o.counts.size() != counts.size()) throw ArgumentError("MagnitudeHistogram: layout mismatch");
    for (std::size_t l = 0; l < counts.size(); ++l) {
      for (std::size_t b = 0; b < counts[l].size(); ++b) counts[l][b] += o.counts[l][b];
      below_small[l] += o.below_small[l];
      totals[l] += o.totals[l];
    }
  }

  /// Fraction of all values (over every level) with magnitude below the threshold.
  double below_fraction() const {
    std::uint64_t b = 0;
    std::uint64_t t = 0;
    for (std::size_t l = 0; l < totals.size(); ++l) {
      b += below_small[l];
      t += totals[l];
    }
    return t == 0 ? 0.0 : static_cast<double>(b) / static_cast<double>(t);
  }
};

inline std::vector<double> default_magnitude_edges() { return {0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0}; }

/// `features` is indexed by level number; empty entries are skipped.
inline MagnitudeHistogram magnitude_histogram(const std::vector<Matrix>& features,
                                              std::vector<double> edges = default_magnitude_edges(),
                                              double small_threshold = 0.1) {
  if (edges.size() < 2) throw ArgumentError("magnitude_histogram: need at least two edges");
  for (std::size_t b = 1; b < edges.size(); ++b) {
    if (!(edges[b] > edges[b - 1])) throw ArgumentError("magnitude_histogram: edges must be strictly increasing");
  }
  bool any = false;
  for (const auto& f : features) any = any || !f.empty();
  if (!any) throw ArgumentError("magnitude_histogram: no features");
  MagnitudeHistogram hist;
  hist.edges = std::move(edges);
  hist.small_threshold = small_threshold;
  const std::size_t bins = hist.edges.size() - 1;
  hist.counts.assign(features.size(), std::vector<std::uint64_t>(bins, 0));
  hist.below_small.assign(features.size(), 0);
  hist.totals.assign(features.size(), 0);
  for (std::size_t l = 0; l < features.size(); ++l) {
    for (double v : features[l].data) {
      const double m = std::abs(v);
      auto it = std::upper_bound(hist.edges.begin(), hist.edges.end(), m);
      std::size_t b = it == hist.edges.begin() ? 0 : static_cast<std::size_t>(it - hist.edges.begin()) - 1;
      b = std::min(b, bins - 1);
      ++hist.counts[l][b];
      hist.below_small[l] += m < small_threshold;
      ++hist.totals[l];
    }
  }
  return hist;
}

}  // namespace rfcr
