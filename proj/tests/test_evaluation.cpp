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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "rfcr/evaluation.hpp"
#include "rfcr/rng.hpp"

namespace rfcr {
namespace {

ConfusionMatrix confusion(const std::vector<Label>& truth, const std::vector<Label>& pred, std::size_t C) {
  ConfusionMatrix cm(C);
  cm.add(truth, pred);
  return cm;
}

TEST(Miou, PerfectPrediction) {
  const std::vector<Label> y = {0, 1, 2, 2, 1, kIgnoreLabel};
  const auto r = miou(confusion(y, {0, 1, 2, 2, 1, 0}, 3));
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
  for (const auto& v : r.per_class) EXPECT_EQ(v, 1.0);
}

TEST(Miou, DisjointPrediction) {
  const auto r = miou(confusion({0, 0, 1, 1}, {1, 1, 0, 0}, 2));
  EXPECT_DOUBLE_EQ(r.mean, 0.0);
}

TEST(Miou, AbsentClassLeftOut) {
  const auto r = miou(confusion({0, 0, 1}, {0, 0, 1}, 4));
  EXPECT_FALSE(r.per_class[2].has_value());
  EXPECT_FALSE(r.per_class[3].has_value());
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
}

TEST(Miou, AllUndefinedThrows) {
  ConfusionMatrix cm(3);
  EXPECT_THROW(miou(cm), MetricError);
  const std::vector<Label> y = {kIgnoreLabel, kIgnoreLabel};
  EXPECT_THROW(miou(confusion(y, {0, 1}, 3)), MetricError);
}

TEST(Miou, SetOracle) {
  Rng rng(11);
  const std::size_t C = 6;
  std::vector<Label> truth(2000), pred(2000);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = rng.below(10) == 0 ? kIgnoreLabel : static_cast<Label>(rng.below(C - 1));
    pred[i] = static_cast<Label>(rng.below(C));
  }
  const auto r = miou(confusion(truth, pred, C));
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < C; ++k) {
    std::set<std::size_t> T, P;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == kIgnoreLabel) continue;
      if (truth[i] == static_cast<Label>(k)) T.insert(i);
      if (pred[i] == static_cast<Label>(k)) P.insert(i);
    }
    std::set<std::size_t> I, U;
    std::set_intersection(T.begin(), T.end(), P.begin(), P.end(), std::inserter(I, I.end()));
    std::set_union(T.begin(), T.end(), P.begin(), P.end(), std::inserter(U, U.end()));
    if (U.empty()) {
      EXPECT_FALSE(r.per_class[k].has_value());
      continue;
    }
    const double iou = static_cast<double>(I.size()) / static_cast<double>(U.size());
    ASSERT_TRUE(r.per_class[k].has_value());
    EXPECT_NEAR(*r.per_class[k], iou, 1e-15);
    sum += iou;
    ++defined;
  }
  EXPECT_NEAR(r.mean, sum / static_cast<double>(defined), 1e-15);
}

TEST(Miou, PermutationInvariant) {
  Rng rng(5);
  std::vector<Label> truth(500), pred(500);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = static_cast<Label>(rng.below(4));
    pred[i] = rng.below(3) == 0 ? static_cast<Label>(rng.below(4)) : truth[i];
  }
  const double base = miou(confusion(truth, pred, 4)).mean;
  std::vector<std::size_t> order(truth.size());
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::rotate(order.begin(), order.begin() + 137, order.end());
  std::vector<Label> t2, p2;
  for (auto i : order) {
    t2.push_back(truth[i]);
    p2.push_back(pred[i]);
  }
  EXPECT_EQ(miou(confusion(t2, p2, 4)).mean, base);
}

TEST(Confusion, RangeAndMerge) {
  ConfusionMatrix cm(2);
  const std::vector<Label> bad = {2};
  const std::vector<Label> zero = {0};
  EXPECT_THROW(cm.add(bad, zero), InputError);
  EXPECT_THROW(cm.add(zero, std::vector<Label>{0, 1}), ArgumentError);
  auto a = confusion({0, 1}, {0, 0}, 2);
  a.merge(confusion({1}, {1}, 2));
  EXPECT_EQ(a.total(), 3u);
  EXPECT_EQ(a.at(1, 0), 1u);
  EXPECT_EQ(a.at(1, 1), 1u);
  EXPECT_THROW(a.merge(ConfusionMatrix(3)), ArgumentError);
}

struct CodeCase {
  PredictionStack preds;
  RFCCStack targets;
};

CodeCase code_case(std::size_t L, std::size_t points, std::size_t C, std::uint64_t seed) {
  Rng rng(seed);
  CodeCase cc;
  cc.preds.code_probs.resize(L + 1);
  cc.targets.num_classes = C;
  for (std::size_t l = 1; l <= L; ++l) {
    CodeMatrix g(points, C);
    Matrix p(points, C);
    for (std::size_t i = 0; i < points; ++i) {
      for (std::size_t k = 0; k < C; ++k) {
        if (rng.below(2)) g.set(i, k);
        p(i, k) = rng.uniform(0.0, 1.0);
      }
    }
    cc.targets.levels.push_back(g);
    if (l >= 2) cc.preds.code_probs[l] = p;
  }
  return cc;
}

TEST(RfccAccuracy, ExactAndInverted) {
  auto cc = code_case(3, 10, 4, 2);
  for (std::size_t l = 2; l <= 3; ++l) {
    auto& p = cc.preds.code_probs[l];
    for (std::size_t i = 0; i < p.rows; ++i) {
      for (std::size_t k = 0; k < p.cols; ++k) p(i, k) = cc.targets.level(l).test(i, k) ? 0.9 : 0.1;
    }
  }
  EXPECT_DOUBLE_EQ(rfcc_accuracy(cc.preds, cc.targets, all_levels(3)), 1.0);
  for (std::size_t l = 2; l <= 3; ++l) {
    for (auto& v : cc.preds.code_probs[l].data) v = 1.0 - v;
  }
  EXPECT_DOUBLE_EQ(rfcc_accuracy(cc.preds, cc.targets, all_levels(3)), 0.0);
}

TEST(RfccAccuracy, ThresholdIsInclusive) {
  auto cc = code_case(2, 1, 2, 3);
  cc.targets.levels[1] = CodeMatrix(1, 2);
  cc.targets.levels[1].set(0, 0);
  cc.preds.code_probs[2](0, 0) = 0.5;
  cc.preds.code_probs[2](0, 1) = 0.49999;
  EXPECT_DOUBLE_EQ(rfcc_accuracy(cc.preds, cc.targets, all_levels(2)), 1.0);
}

TEST(RfccAccuracy, CountingOracleWithMask) {
  const std::size_t L = 4;
  auto cc = code_case(L, 37, 5, 9);
  LevelMask mask = all_levels(L);
  mask[3] = false;
  std::size_t agree = 0, total = 0;
  for (std::size_t l : {2u, 4u}) {
    for (std::size_t i = 0; i < 37; ++i) {
      for (std::size_t k = 0; k < 5; ++k) {
        const bool on = cc.preds.code_probs[l](i, k) >= 0.5;
        agree += on == cc.targets.level(l).test(i, k);
        ++total;
      }
    }
  }
  const auto acc = rfcc_bit_accuracy(cc.preds, cc.targets, mask);
  EXPECT_EQ(acc.correct, agree);
  EXPECT_EQ(acc.total, total);
  EXPECT_DOUBLE_EQ(acc.value(), static_cast<double>(agree) / static_cast<double>(total));
}

TEST(RfccAccuracy, ShapeErrors) {
  auto cc = code_case(3, 4, 2, 1);
  EXPECT_THROW(rfcc_accuracy(cc.preds, cc.targets, all_levels(2)), ArgumentError);
  cc.preds.code_probs[3] = Matrix(5, 2);
  EXPECT_THROW(rfcc_accuracy(cc.preds, cc.targets, all_levels(3)), ArgumentError);
}

TEST(MagnitudeHistogram, AllZeroFeatures) {
  std::vector<Matrix> f(3);
  f[2] = Matrix(4, 3, 0.0);
  const auto h = magnitude_histogram(f);
  EXPECT_EQ(h.counts[2][0], 12u);
  EXPECT_DOUBLE_EQ(h.below_fraction(), 1.0);
}

TEST(MagnitudeHistogram, CountConservationAndBins) {
  Rng rng(8);
  std::vector<Matrix> f(4);
  std::size_t n = 0, below = 0;
  for (std::size_t l = 2; l < 4; ++l) {
    f[l] = Matrix(50, 7);
    for (auto& v : f[l].data) {
      v = rng.uniform(-12.0, 12.0);
      below += std::abs(v) < 0.1;
      ++n;
    }
  }
  f[3].data[0] = 0.1;
  f[3].data[1] = -8.0;
  f[3].data[2] = 100.0;
  below -= std::abs(f[3].data[0]) < 0.1;
  const auto h = magnitude_histogram(f);
  std::uint64_t total = 0;
  for (const auto& lv : h.counts) {
    for (auto c : lv) total += c;
  }
  EXPECT_EQ(total, n);
  EXPECT_EQ(h.totals[2] + h.totals[3], n);
  EXPECT_NEAR(h.below_fraction(), static_cast<double>(below) / static_cast<double>(n), 1e-15);

  std::vector<Matrix> one(1);
  one[0] = Matrix(1, 3);
  one[0].data = {0.1, 8.0, 100.0};
  const auto e = magnitude_histogram(one);
  EXPECT_EQ(e.counts[0][1], 1u);
  EXPECT_EQ(e.counts[0].back(), 2u);
  EXPECT_EQ(e.below_small[0], 0u);
}

TEST(MagnitudeHistogram, BadEdges) {
  std::vector<Matrix> f(1);
  f[0] = Matrix(1, 1, 0.3);
  EXPECT_THROW(magnitude_histogram(f, {0.0, 1.0, 0.5}), ArgumentError);
  EXPECT_THROW(magnitude_histogram(f, {0.0}), ArgumentError);
  EXPECT_THROW(magnitude_histogram(std::vector<Matrix>(2)), ArgumentError);
}

TEST(MagnitudeHistogram, MergeMatchesJointHistogram) {
  std::vector<Matrix> a(2), b(2), ab(2);
  a[1] = Matrix(1, 3);
  a[1].data = {0.05, 0.3, 3.0};
  b[1] = Matrix(1, 2);
  b[1].data = {-0.01, 9.0};
  ab[1] = Matrix(1, 5);
  ab[1].data = {0.05, 0.3, 3.0, -0.01, 9.0};
  auto h = magnitude_histogram(a);
  h.merge(magnitude_histogram(b));
  const auto j = magnitude_histogram(ab);
  EXPECT_EQ(h.counts, j.counts);
  EXPECT_EQ(h.below_small, j.below_small);
  EXPECT_DOUBLE_EQ(h.below_fraction(), 0.4);
}

}  // namespace
}  // namespace rfcr
