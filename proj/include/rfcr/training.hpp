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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rfcr/datasets_io.hpp"
#include "rfcr/error.hpp"
#include "rfcr/evaluation.hpp"
#include "rfcr/hierarchy.hpp"
#include "rfcr/losses.hpp"
#include "rfcr/network.hpp"
#include "rfcr/rfcc.hpp"
#include "rfcr/rng.hpp"

namespace rfcr {

/// multi_hot: OR-pooled codes. one_hot: receptive-field majority class.
/// ovu: no codes; level predictions are upsampled to the input points and
/// scored with the point labels.
enum class TargetMode { multi_hot, one_hot, ovu };

inline const char* to_string(TargetMode m) {
  switch (m) {
    case TargetMode::multi_hot: return "multi_hot";
    case TargetMode::one_hot: return "one_hot";
    case TargetMode::ovu: return "ovu";
  }
  return "?";
}

inline TargetMode parse_target_mode(const std::string& s) {
  if (s == "multi_hot") return TargetMode::multi_hot;
  if (s == "one_hot") return TargetMode::one_hot;
  if (s == "ovu") return TargetMode::ovu;
  throw ConfigError("unknown target mode '" + s + "' (expected multi_hot, one_hot or ovu)");
}

struct TrainConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double learning_rate = 0.05;
  double momentum = 0.9;
  /// L2 penalty added to the gradient of every weight matrix (not biases).
  double weight_decay = 1e-3;
  double lr_decay = 0.5;
  std::size_t lr_decay_every = 15;  // epochs; 0 keeps the rate fixed
  std::size_t epochs = 60;
  std::size_t batch_size = 1;
  std::uint64_t seed = 1;
  /// Supervised levels within 2..L. Empty means no level supervision.
  std::vector<std::size_t> supervision_mask{2, 3, 4, 5};
  TargetMode target_mode = TargetMode::multi_hot;
  HeadSide head_side = HeadSide::decoder;
  bool fd_enabled = true;
  FdAttachment fd_attachment = FdAttachment::identity;
  double rfcc_threshold = 0.5;
  double divergence_limit = 1e4;

  void validate(std::size_t levels) const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("TrainConfig: lambdas must be >= 0");
    if (!(learning_rate >= 0.0)) throw ConfigError("TrainConfig: learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("TrainConfig: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("TrainConfig: weight decay must be >= 0");
    if (!(lr_decay > 0.0)) throw ConfigError("TrainConfig: lr_decay must be > 0");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch size must be >= 1");
    for (auto l : supervision_mask) {
      if (l < 2 || l > levels) throw ConfigError("TrainConfig: supervision level " + std::to_string(l) + " outside 2..L");
    }
  }

  LevelMask mask(std::size_t levels) const {
    LevelMask m(levels + 1, false);
    for (auto l : supervision_mask) {
      if (l >= 2 && l <= levels) m[l] = true;
    }
    return m;
  }

  double effective_lambda2() const { return fd_enabled ? lambda2 : 0.0; }
};

/// Copies the structural switches of a training mode into a network config.
inline NetworkConfig network_config_for(NetworkConfig net, const TrainConfig& tc) {
  net.head_side = tc.head_side;
  net.head_kind = tc.target_mode == TargetMode::ovu ? HeadKind::softmax : HeadKind::sigmoid;
  net.fd_attachment = tc.fd_attachment;
  return net;
}

struct SupervisionTargets {
  std::optional<RFCCStack> codes;
  /// For ovu: chains[l][i] is the level-l point that level-1 point i copies from.
  std::vector<std::vector<std::uint32_t>> chains;
};

inline SupervisionTargets make_targets(const Hierarchy& h, std::span<const Label> labels, std::size_t num_classes,
                                       TargetMode mode) {
  SupervisionTargets t;
  switch (mode) {
    case TargetMode::multi_hot:
      t.codes = gen_targets(h, labels, num_classes);
      break;
    case TargetMode::one_hot:
      t.codes = majority_code(h, labels, num_classes);
      break;
    case TargetMode::ovu:
      check_labels(labels, num_classes, kIgnoreLabel);
      t.chains.resize(h.num_levels() + 1);
      for (std::size_t l = 2; l <= h.num_levels(); ++l) t.chains[l] = upsample_chain(h, l);
      break;
  }
  return t;
}

/// Copies each level-l row onto the level-1 points through the chain map.
inline Matrix upsample_rows(const Matrix& rows, std::span<const std::uint32_t> chain) {
  Matrix out(chain.size(), rows.cols);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    auto src = rows.row(chain[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

/// A scene with everything that stays fixed across epochs.
struct PreparedScene {
  PointCloud cloud;
  Hierarchy hierarchy;
  Matrix input;
  SupervisionTargets targets;
};

inline PreparedScene prepare_scene(PointCloud cloud, const HierarchyConfig& hc, std::size_t num_classes,
                                   TargetMode mode) {
  PreparedScene s;
  check_labels(cloud.labels, num_classes, kIgnoreLabel);
  s.hierarchy = build_hierarchy(cloud, hc);
  s.input = make_input_features(cloud.positions);
  s.targets = make_targets(s.hierarchy, cloud.labels, num_classes, mode);
  s.cloud = std::move(cloud);
  return s;
}

struct StepResult {
  LossReport report;
  NetworkParams grads;
  ForwardOutput output;
  bool all_ignored = false;
};

/// Forward pass, every loss term, and reverse-mode gradients of the total.
inline StepResult loss_and_gradients(const NetworkParams& params, const NetworkConfig& net, const PreparedScene& scene,
                                     const TrainConfig& tc) {
  const std::size_t L = net.levels;
  auto [out, cache] = forward(params, net, scene.hierarchy, scene.input);
  const LevelMask mask = tc.mask(L);

  const auto sem = semantic_ce(out.pred.final_probs, scene.cloud.labels);
  LevelLoss reason;
  if (tc.target_mode == TargetMode::ovu) {
    reason = upsampled_ce_loss(out.pred, scene.targets.chains, scene.cloud.labels, kIgnoreLabel, mask);
  } else {
    if (!scene.targets.codes) throw ContractError("loss_and_gradients: scene prepared without codes");
    reason = reasoning_loss(out.pred, *scene.targets.codes, mask);
  }
  const auto dens = fd_loss(out.pred.fd_features);
  const double l2 = tc.effective_lambda2();

  StepResult r;
  r.report = total_loss(sem.value, reason.value, dens.value, tc.lambda1, l2);
  r.report.reasoning_levels = reason.per_level;
  r.report.densification_levels = dens.per_level;
  r.all_ignored = sem.all_ignored;

  LossGradients lg;
  lg.final_logits = sem.logit_grad;
  lg.head_logits.resize(L + 1);
  lg.fd_features.resize(L + 1);
  for (std::size_t l = 2; l <= L; ++l) {
    if (tc.lambda1 != 0.0 && !reason.grads[l].empty()) {
      lg.head_logits[l] = reason.grads[l];
      for (auto& v : lg.head_logits[l].data) v *= tc.lambda1;
    }
    if (l2 != 0.0) {
      lg.fd_features[l] = dens.grads[l];
      for (auto& v : lg.fd_features[l].data) v *= l2;
    }
  }
  r.grads = backward(params, net, cache, lg);
  r.output = std::move(out);
  return r;
}

/// Classic momentum: v <- momentum * v + g, p <- p - lr * v.
struct MomentumState {
  NetworkParams velocity;
  bool initialized = false;
};

inline void sgd_step(NetworkParams& params, const NetworkParams& grads, double lr, double momentum,
                     MomentumState& state) {
  if (!state.initialized) {
    state.velocity = params.zeros_like();
    state.initialized = true;
  }
  std::vector<std::vector<double>*> p;
  std::vector<const std::vector<double>*> g;
  std::vector<std::vector<double>*> v;
  params.for_each([&](std::vector<double>& x) { p.push_back(&x); });
  grads.for_each([&](const std::vector<double>& x) { g.push_back(&x); });
  state.velocity.for_each([&](std::vector<double>& x) { v.push_back(&x); });
  if (p.size() != g.size() || p.size() != v.size()) throw ContractError("sgd_step: parameter/gradient layout mismatch");
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t]->size() != g[t]->size() || p[t]->size() != v[t]->size()) {
      throw ContractError("sgd_step: tensor " + std::to_string(t) + " shape mismatch");
    }
    auto& pv = *p[t];
    const auto& gv = *g[t];
    auto& vv = *v[t];
    for (std::size_t n = 0; n < pv.size(); ++n) {
      vv[n] = momentum * vv[n] + gv[n];
      pv[n] -= lr * vv[n];
    }
  }
}

/// Adds `src` into `dst` tensor by tensor.
inline void accumulate(NetworkParams& dst, const NetworkParams& src, double scale = 1.0) {
  std::vector<std::vector<double>*> d;
  std::vector<const std::vector<double>*> s;
  dst.for_each([&](std::vector<double>& x) { d.push_back(&x); });
  src.for_each([&](const std::vector<double>& x) { s.push_back(&x); });
  for (std::size_t t = 0; t < d.size(); ++t) {
    for (std::size_t n = 0; n < d[t]->size(); ++n) (*d[t])[n] += scale * (*s[t])[n];
  }
}

/// grad += decay * weight for every weight matrix; biases are left alone.
inline void add_weight_decay(NetworkParams& grads, const NetworkParams& params, double decay) {
  auto layers = [](auto& p) {
    std::vector<decltype(&p.final_out)> out;
    for (std::size_t l = 1; l < p.encoder.size(); ++l) out.push_back(&p.encoder[l]);
    for (std::size_t l = 1; l < p.decoder.size(); ++l) out.push_back(&p.decoder[l]);
    for (std::size_t l = 2; l < p.head_hidden.size(); ++l) {
      out.push_back(&p.head_hidden[l]);
      out.push_back(&p.head_out[l]);
    }
    for (std::size_t l = 2; l < p.fd.size(); ++l) out.push_back(&p.fd[l]);
    out.push_back(&p.final_hidden);
    out.push_back(&p.final_out);
    return out;
  };
  auto g = layers(grads);
  auto w = layers(params);
  for (std::size_t t = 0; t < g.size(); ++t) {
    for (std::size_t n = 0; n < g[t]->weight.size(); ++n) g[t]->weight[n] += decay * w[t]->weight[n];
  }
}

struct EvalResult {
  ConfusionMatrix confusion{2};
  std::optional<IouResult> iou;
  std::optional<double> rfcc_oa;
  std::optional<MagnitudeHistogram> magnitudes;
  std::vector<std::vector<Label>> predictions;
};

/// Scores a parameter set on prepared scenes. RFCC accuracy is only defined
/// for code targets with at least one supervised level.
inline EvalResult evaluate(const NetworkParams& params, const NetworkConfig& net, std::span<const PreparedScene> scenes,
                           const TrainConfig& tc, bool keep_predictions = false) {
  EvalResult r;
  r.confusion = ConfusionMatrix(net.num_classes);
  const LevelMask mask = tc.mask(net.levels);
  const bool codes = tc.target_mode != TargetMode::ovu && !tc.supervision_mask.empty();
  BitAccuracy bits;
  for (const auto& scene : scenes) {
    auto [out, cache] = forward(params, net, scene.hierarchy, scene.input);
    auto pred = predict_labels(out);
    r.confusion.add(scene.cloud.labels, pred);
    if (codes) bits.merge(rfcc_bit_accuracy(out.pred, *scene.targets.codes, mask, tc.rfcc_threshold));
    auto hist = magnitude_histogram(out.pred.fd_features);
    if (r.magnitudes) {
      r.magnitudes->merge(hist);
    } else {
      r.magnitudes = std::move(hist);
    }
    if (keep_predictions) r.predictions.push_back(std::move(pred));
  }
  if (r.confusion.total() > 0) r.iou = miou(r.confusion);
  if (codes && bits.total > 0) r.rfcc_oa = bits.value();
  return r;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  LossReport loss;  // mean over the epoch's training scenes
  std::optional<double> val_miou;
  std::optional<double> rfcc_oa;
  std::optional<double> below_small_fraction;
  double seconds = 0.0;
};

struct TrainRecord {
  std::vector<EpochMetrics> epochs;
  std::string abort_reason;
};

/// Raised when the total loss leaves the finite/bounded range; carries the
/// record up to the failing epoch.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, TrainRecord record)
      : NumericError(what), record_(std::move(record)) {}
  const TrainRecord& record() const { return record_; }

 private:
  TrainRecord record_;
};

struct TrainResult {
  NetworkParams params;
  NetworkConfig network;
  TrainRecord record;
};

/// Per-split prepared scenes, built once; geometry is fixed across epochs.
struct PreparedSplit {
  std::vector<PreparedScene> train;
  std::vector<PreparedScene> val;
};

inline PreparedSplit prepare_split(const DatasetSplit& data, const HierarchyConfig& hc, std::size_t num_classes,
                                   TargetMode mode) {
  PreparedSplit s;
  for (const auto& c : data.train) s.train.push_back(prepare_scene(c, hc, num_classes, mode));
  for (const auto& c : data.val) s.val.push_back(prepare_scene(c, hc, num_classes, mode));
  return s;
}

inline double learning_rate_at(const TrainConfig& tc, std::size_t epoch) {
  if (tc.lr_decay_every == 0) return tc.learning_rate;
  const auto steps = static_cast<double>((epoch - 1) / tc.lr_decay_every);
  return tc.learning_rate * std::pow(tc.lr_decay, steps);
}

inline TrainResult train(const PreparedSplit& data, const NetworkConfig& base_net, const TrainConfig& tc,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  if (data.train.empty()) throw ArgumentError("train: empty training split");
  const NetworkConfig net = network_config_for(base_net, tc);
  net.validate();
  tc.validate(net.levels);

  TrainResult result;
  result.network = net;
  result.params = init_params(net, derive_seed(tc.seed, 1));
  Rng order_rng(derive_seed(tc.seed, 2));
  MomentumState momentum;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto diverge = [&](std::size_t epoch, const std::string& why) {
    const std::string msg = "training diverged at epoch " + std::to_string(epoch) + ": " + why;
    result.record.abort_reason = msg;
    throw TrainingDiverged(msg, result.record);
  };

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = learning_rate_at(tc, epoch);
    order_rng.shuffle(order.begin(), order.end());
    EpochMetrics m;
    m.epoch = epoch;
    std::vector<double> ls;
    std::vector<double> lr_terms;
    std::vector<double> lf;
    std::vector<double> tot;
    std::vector<std::vector<double>> lr_levels(net.levels + 1);
    std::vector<std::vector<double>> lf_levels(net.levels + 1);
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t stop = std::min(order.size(), start + tc.batch_size);
      NetworkParams batch_grad = result.params.zeros_like();
      for (std::size_t k = start; k < stop; ++k) {
        std::optional<StepResult> maybe;
        try {
          maybe = loss_and_gradients(result.params, net, data.train[order[k]], tc);
        } catch (const NumericError& e) {
          diverge(epoch, e.what());
        }
        auto& step = *maybe;
        const auto& rep = step.report;
        if (!std::isfinite(rep.total) || rep.total > tc.divergence_limit) {
          std::ostringstream msg;
          msg << "total loss " << rep.total;
          diverge(epoch, msg.str());
        }
        accumulate(batch_grad, step.grads);
        ls.push_back(rep.semantic);
        lr_terms.push_back(rep.reasoning);
        lf.push_back(rep.densification);
        tot.push_back(rep.total);
        for (std::size_t l = 2; l <= net.levels; ++l) {
          lr_levels[l].push_back(rep.reasoning_levels[l]);
          lf_levels[l].push_back(rep.densification_levels[l]);
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      batch_grad.for_each([&](std::vector<double>& v) {
        for (auto& x : v) x *= inv;
      });
      if (tc.weight_decay > 0.0) add_weight_decay(batch_grad, result.params, tc.weight_decay);
      sgd_step(result.params, batch_grad, lr, tc.momentum, momentum);
    }
    const double n = static_cast<double>(tot.size());
    m.loss = total_loss(pairwise_sum(ls) / n, pairwise_sum(lr_terms) / n, pairwise_sum(lf) / n, tc.lambda1,
                        tc.effective_lambda2());
    m.loss.reasoning_levels.assign(net.levels + 1, 0.0);
    m.loss.densification_levels.assign(net.levels + 1, 0.0);
    for (std::size_t l = 2; l <= net.levels; ++l) {
      m.loss.reasoning_levels[l] = pairwise_sum(lr_levels[l]) / n;
      m.loss.densification_levels[l] = pairwise_sum(lf_levels[l]) / n;
    }
    if (!data.val.empty()) {
      std::optional<EvalResult> maybe_ev;
      try {
        maybe_ev = evaluate(result.params, net, data.val, tc);
      } catch (const NumericError& e) {
        diverge(epoch, e.what());
      }
      const auto& ev = *maybe_ev;
      if (ev.iou) m.val_miou = ev.iou->mean;
      m.rfcc_oa = ev.rfcc_oa;
      if (ev.magnitudes) m.below_small_fraction = ev.magnitudes->below_fraction();
    }
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.record.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

/// Convenience overload that builds hierarchies and targets first.
inline TrainResult train(const DatasetSplit& data, const HierarchyConfig& hc, const NetworkConfig& net,
                         const TrainConfig& tc, const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  if (data.train.empty()) throw ArgumentError("train: empty training split");
  return train(prepare_split(data, hc, net.num_classes, tc.target_mode), net, tc, on_epoch);
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream os;
  os << std::setprecision(12) << *v;
  return os.str();
}

/// Columns: epoch, L_S, L_R, L_F, total, mIoU, rfcc_oa. Undefined metrics are "NA".
inline std::string metrics_csv(const TrainRecord& record) {
  std::ostringstream os;
  os << "epoch,L_S,L_R,L_F,total,mIoU,rfcc_oa\n";
  os << std::setprecision(12);
  for (const auto& e : record.epochs) {
    os << e.epoch << ',' << e.loss.semantic << ',' << e.loss.reasoning << ',' << e.loss.densification << ','
       << e.loss.total << ',' << format_metric(e.val_miou) << ',' << format_metric(e.rfcc_oa) << '\n';
  }
  return os.str();
}

}  // namespace rfcr
