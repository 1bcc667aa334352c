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

#include "rfcr/error.hpp"
#include "rfcr/geometry.hpp"
#include "rfcr/matrix.hpp"
#include "rfcr/rfcc.hpp"

namespace rfcr {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbEpsilon = 1e-7;

inline double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Row-wise softmax, max-shifted.
inline void softmax_rows(const Matrix& logits, Matrix& probs) {
  probs = Matrix(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    auto in = logits.row(i);
    auto out = probs.row(i);
    const double m = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      out[k] = std::exp(in[k] - m);
      s += out[k];
    }
    for (auto& v : out) v /= s;
  }
}

/// Pairwise (tree) summation; the reduction order depends only on the length.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// Predictions of one forward pass. Vectors are indexed by level number, so
/// entries 0 and 1 of `code_probs` / `fd_features` are empty.
struct PredictionStack {
  std::vector<Matrix> code_probs;
  Matrix final_probs;
  std::vector<Matrix> fd_features;

  std::size_t num_levels() const { return code_probs.empty() ? 0 : code_probs.size() - 1; }
};

/// Which levels in 2..L carry a reasoning loss; indexed by level number.
using LevelMask = std::vector<bool>;

inline LevelMask all_levels(std::size_t L) {
  LevelMask m(L + 1, true);
  m[0] = false;
  m[1] = false;
  return m;
}

struct LossReport {
  double semantic = 0.0;                 // L_S
  double reasoning = 0.0;                // L_R
  std::vector<double> reasoning_levels;  // L_R^l by level number
  double densification = 0.0;           // L_F
  std::vector<double> densification_levels;
  double total = 0.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
};

// ---------------------------------------------------------------------------
// RFCC reasoning
// ---------------------------------------------------------------------------

/// Channel-averaged BCE of one predicted code against its target bits.
/// Writes d(loss)/d(logit) = (p - g) / C into `logit_grad`.
inline double rfcc_bce(std::span<const double> probs, std::span<const std::uint64_t> target_bits,
                       std::span<double> logit_grad) {
  const std::size_t C = probs.size();
  if (C == 0) throw ArgumentError("rfcc_bce: empty prediction");
  if (target_bits.size() * 64 < C) throw ArgumentError("rfcc_bce: target shorter than prediction");
  if (logit_grad.size() != C) throw ArgumentError("rfcc_bce: gradient buffer size mismatch");
  double loss = 0.0;
  const double inv_c = 1.0 / static_cast<double>(C);
  for (std::size_t k = 0; k < C; ++k) {
    const double p = probs[k];
    if (!std::isfinite(p)) throw NumericError("rfcc_bce: non-finite prediction");
    const double g = ((target_bits[k / 64] >> (k % 64)) & 1ULL) ? 1.0 : 0.0;
    const double pc = clamp_prob(p);
    loss -= g * std::log(pc) + (1.0 - g) * std::log(1.0 - pc);
    logit_grad[k] = (p - g) * inv_c;
  }
  return loss * inv_c;
}

struct BceResult {
  double loss = 0.0;
  std::vector<double> logit_grad;
};

inline BceResult rfcc_bce(std::span<const double> probs, const CodeMatrix& target, std::size_t row) {
  if (target.classes() != probs.size()) throw ArgumentError("rfcc_bce: class count mismatch");
  BceResult r;
  r.logit_grad.resize(probs.size());
  r.loss = rfcc_bce(probs, target.row(row), r.logit_grad);
  return r;
}

/// Result of a per-level objective: total, per-level breakdown and
/// gradients, each vector indexed by level number.
struct LevelLoss {
  double value = 0.0;
  std::vector<double> per_level;
  std::vector<Matrix> grads;
};

/// L_R = 1/(L-1) * sum over supervised levels of the point- and channel-
/// averaged BCE. Unsupervised levels contribute zero; the divisor stays L-1.
inline LevelLoss reasoning_loss(const PredictionStack& preds, const RFCCStack& targets, const LevelMask& mask) {
  const std::size_t L = preds.num_levels();
  if (L < 2) throw ArgumentError("reasoning_loss: need at least two levels");
  if (targets.num_levels() != L) throw ArgumentError("reasoning_loss: level count mismatch");
  if (mask.size() != L + 1) throw ArgumentError("reasoning_loss: mask size mismatch");
  LevelLoss out;
  out.per_level.assign(L + 1, 0.0);
  out.grads.resize(L + 1);
  const double inv_levels = 1.0 / static_cast<double>(L - 1);
  std::vector<double> level_terms;
  for (std::size_t l = 2; l <= L; ++l) {
    if (!mask[l]) continue;
    const Matrix& p = preds.code_probs[l];
    const CodeMatrix& g = targets.level(l);
    if (p.rows != g.points() || p.cols != g.classes()) {
      throw ArgumentError("reasoning_loss: shape mismatch at level " + std::to_string(l));
    }
    if (p.rows == 0) throw ArgumentError("reasoning_loss: empty level " + std::to_string(l));
    Matrix grad(p.rows, p.cols);
    std::vector<double> point_loss(p.rows);
    for (std::size_t i = 0; i < p.rows; ++i) point_loss[i] = rfcc_bce(p.row(i), g.row(i), grad.row(i));
    const double n = static_cast<double>(p.rows);
    out.per_level[l] = pairwise_sum(point_loss) / n;
    const double scale = inv_levels / n;
    for (auto& v : grad.data) v *= scale;
    out.grads[l] = std::move(grad);
    level_terms.push_back(out.per_level[l]);
  }
  out.value = pairwise_sum(level_terms) * inv_levels;
  return out;
}

/// Reasoning loss for the upsampling ablation: each level's softmax
/// prediction is copied to level-1 points through `chains[l]` and scored by
/// cross-entropy against the point labels.
inline LevelLoss upsampled_ce_loss(const PredictionStack& preds,
                                   const std::vector<std::vector<std::uint32_t>>& chains,
                                   std::span<const Label> labels, Label ignore, const LevelMask& mask) {
  const std::size_t L = preds.num_levels();
  if (L < 2) throw ArgumentError("upsampled_ce_loss: need at least two levels");
  if (chains.size() != L + 1 || mask.size() != L + 1) throw ArgumentError("upsampled_ce_loss: size mismatch");
  LevelLoss out;
  out.per_level.assign(L + 1, 0.0);
  out.grads.resize(L + 1);
  std::size_t labeled = 0;
  for (auto y : labels) labeled += (y != ignore);
  const double inv_levels = 1.0 / static_cast<double>(L - 1);
  std::vector<double> level_terms;
  for (std::size_t l = 2; l <= L; ++l) {
    if (!mask[l]) continue;
    const Matrix& p = preds.code_probs[l];
    const auto& chain = chains[l];
    if (chain.size() != labels.size()) throw ArgumentError("upsampled_ce_loss: chain length mismatch");
    Matrix grad(p.rows, p.cols);
    if (labeled == 0) {
      out.grads[l] = std::move(grad);
      continue;
    }
    std::vector<double> point_loss;
    point_loss.reserve(labeled);
    const double scale = inv_levels / static_cast<double>(labeled);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == ignore) continue;
      const auto y = static_cast<std::size_t>(labels[i]);
      if (y >= p.cols) throw InputError("upsampled_ce_loss: label out of range");
      const auto j = chain[i];
      point_loss.push_back(-std::log(clamp_prob(p(j, y))));
      for (std::size_t k = 0; k < p.cols; ++k) grad(j, k) += (p(j, k) - (k == y ? 1.0 : 0.0)) * scale;
    }
    out.per_level[l] = pairwise_sum(point_loss) / static_cast<double>(labeled);
    out.grads[l] = std::move(grad);
    level_terms.push_back(out.per_level[l]);
  }
  out.value = pairwise_sum(level_terms) * inv_levels;
  return out;
}

// ---------------------------------------------------------------------------
// Feature densification
// ---------------------------------------------------------------------------

struct Potential {
  double value = 0.0;
  double grad = 0.0;
};

/// Centrifugal potential log(1 + exp(-|x|)) and its derivative. The
/// derivative has the opposite sign of x, so descent pushes x away from 0;
/// it is taken as 0 at x == 0.
inline Potential centrifugal(double x) {
  if (!std::isfinite(x)) throw NumericError("centrifugal: non-finite feature");
  const double e = std::exp(-std::abs(x));
  Potential p;
  p.value = std::log1p(e);
  if (x > 0.0) {
    p.grad = -e / (1.0 + e);
  } else if (x < 0.0) {
    p.grad = e / (1.0 + e);
  }
  return p;
}

/// L_F over levels 2..L of `features` (indexed by level number).
inline LevelLoss fd_loss(const std::vector<Matrix>& features) {
  if (features.size() < 3) throw ArgumentError("fd_loss: need levels 2..L");
  const std::size_t L = features.size() - 1;
  LevelLoss out;
  out.per_level.assign(L + 1, 0.0);
  out.grads.resize(L + 1);
  const double inv_levels = 1.0 / static_cast<double>(L - 1);
  std::vector<double> level_terms;
  for (std::size_t l = 2; l <= L; ++l) {
    const Matrix& f = features[l];
    if (f.empty()) throw ArgumentError("fd_loss: empty level " + std::to_string(l));
    Matrix grad(f.rows, f.cols);
    std::vector<double> terms(f.size());
    const double count = static_cast<double>(f.size());
    for (std::size_t n = 0; n < f.size(); ++n) {
      const auto pot = centrifugal(f.data[n]);
      terms[n] = pot.value;
      grad.data[n] = pot.grad * inv_levels / count;
    }
    out.per_level[l] = pairwise_sum(terms) / count;
    out.grads[l] = std::move(grad);
    level_terms.push_back(out.per_level[l]);
  }
  out.value = pairwise_sum(level_terms) * inv_levels;
  return out;
}

// ---------------------------------------------------------------------------
// Semantic cross-entropy and the combined objective
// ---------------------------------------------------------------------------

struct SemanticLoss {
  double value = 0.0;
  Matrix logit_grad;
  /// Set when every point is ignored; value is then 0.
  bool all_ignored = false;
};

inline SemanticLoss semantic_ce(const Matrix& probs, std::span<const Label> labels, Label ignore = kIgnoreLabel) {
  if (probs.rows != labels.size()) throw ArgumentError("semantic_ce: row/label count mismatch");
  SemanticLoss out;
  out.logit_grad = Matrix(probs.rows, probs.cols);
  std::size_t labeled = 0;
  for (auto y : labels) labeled += (y != ignore);
  if (labeled == 0) {
    out.all_ignored = true;
    return out;
  }
  std::vector<double> terms;
  terms.reserve(labeled);
  const double inv_n = 1.0 / static_cast<double>(labeled);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    if (labels[i] == ignore) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.cols) {
      throw InputError("semantic_ce: label out of range at point " + std::to_string(i));
    }
    const auto y = static_cast<std::size_t>(labels[i]);
    const double py = probs(i, y);
    if (!std::isfinite(py)) throw NumericError("semantic_ce: non-finite probability");
    terms.push_back(-std::log(clamp_prob(py)));
    for (std::size_t k = 0; k < probs.cols; ++k) {
      out.logit_grad(i, k) = (probs(i, k) - (k == y ? 1.0 : 0.0)) * inv_n;
    }
  }
  out.value = pairwise_sum(terms) * inv_n;
  return out;
}

inline LossReport total_loss(double semantic, double reasoning, double densification, double lambda1 = 1.0,
                             double lambda2 = 1.0) {
  LossReport r;
  r.semantic = semantic;
  r.reasoning = reasoning;
  r.densification = densification;
  r.lambda1 = lambda1;
  r.lambda2 = lambda2;
  r.total = semantic + lambda1 * reasoning + lambda2 * densification;
  return r;
}

}  // namespace rfcr
