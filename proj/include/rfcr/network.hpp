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
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rfcr/error.hpp"
#include "rfcr/geometry.hpp"
#include "rfcr/hierarchy.hpp"
#include "rfcr/losses.hpp"
#include "rfcr/matrix.hpp"
#include "rfcr/rng.hpp"

namespace rfcr {

/// Where the per-level code heads (and densification) attach.
enum class HeadSide { decoder, encoder };
/// Sigmoid heads predict multi-label codes; softmax heads are used by the
/// upsampling ablation, which scores level predictions as class distributions.
enum class HeadKind { sigmoid, softmax };
enum class FdAttachment { identity, perceptron };

struct NetworkConfig {
  std::size_t levels = 5;
  std::vector<std::size_t> encoder_widths{16, 32, 32, 48, 48};
  std::vector<std::size_t> decoder_widths{16, 32, 32, 48, 48};
  std::size_t head_hidden = 16;
  std::size_t input_dim = 2;
  std::size_t num_classes = 2;
  double leaky_slope = 0.1;
  HeadSide head_side = HeadSide::decoder;
  HeadKind head_kind = HeadKind::sigmoid;
  FdAttachment fd_attachment = FdAttachment::identity;

  std::size_t enc(std::size_t l) const { return encoder_widths[l - 1]; }
  std::size_t dec(std::size_t l) const { return decoder_widths[l - 1]; }

  /// Width of the features the level-l heads read.
  std::size_t head_input(std::size_t l) const { return head_side == HeadSide::decoder ? dec(l) : enc(l); }

  void validate() const {
    if (levels < 2) throw ConfigError("NetworkConfig: levels must be >= 2");
    if (encoder_widths.size() != levels || decoder_widths.size() != levels) {
      throw ConfigError("NetworkConfig: need one encoder and one decoder width per level");
    }
    for (auto w : encoder_widths) {
      if (w < 1) throw ConfigError("NetworkConfig: widths must be >= 1");
    }
    for (auto w : decoder_widths) {
      if (w < 1) throw ConfigError("NetworkConfig: widths must be >= 1");
    }
    if (head_hidden < 1 || input_dim < 1) throw ConfigError("NetworkConfig: widths must be >= 1");
    if (num_classes < 2) throw ConfigError("NetworkConfig: need at least 2 classes");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("NetworkConfig: leaky slope must be in [0, 1)");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Fully connected layer y = W x + b with W stored out x in, row-major.
struct Linear {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  Linear() = default;
  Linear(std::size_t in_dim, std::size_t out_dim)
      : in(in_dim), out(out_dim), weight(in_dim * out_dim, 0.0), bias(out_dim, 0.0) {}

  double w(std::size_t o, std::size_t i) const { return weight[o * in + i]; }

  friend bool operator==(const Linear&, const Linear&) = default;
};

/// All trainable tensors. Per-level vectors are indexed by level number;
/// head and densification entries exist for levels 2..L.
struct NetworkParams {
  std::vector<Linear> encoder;
  std::vector<Linear> decoder;
  std::vector<Linear> head_hidden;
  std::vector<Linear> head_out;
  std::vector<Linear> fd;  // only populated for the perceptron attachment
  Linear final_hidden;
  Linear final_out;

  /// Visits every weight/bias buffer in declaration order.
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    auto layer = [&](auto& lin) {
      f(lin.weight);
      f(lin.bias);
    };
    for (std::size_t l = 1; l < self.encoder.size(); ++l) layer(self.encoder[l]);
    for (std::size_t l = 1; l < self.decoder.size(); ++l) layer(self.decoder[l]);
    for (std::size_t l = 2; l < self.head_hidden.size(); ++l) {
      layer(self.head_hidden[l]);
      layer(self.head_out[l]);
    }
    for (std::size_t l = 2; l < self.fd.size(); ++l) layer(self.fd[l]);
    layer(self.final_hidden);
    layer(self.final_out);
  }

  template <typename F>
  void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::vector<double>& v) { n += v.size(); });
    return n;
  }

  /// Same shapes, all zeros.
  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    z.for_each([](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
    return z;
  }

  /// FNV-1a over the raw bytes of every parameter.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    for_each([&](const std::vector<double>& v) {
      for (double x : v) {
        auto bits = std::bit_cast<std::uint64_t>(x);
        for (int b = 0; b < 8; ++b) {
          h ^= (bits >> (8 * b)) & 0xFF;
          h *= 1099511628211ULL;
        }
      }
      h ^= v.size();
      h *= 1099511628211ULL;
    });
    return h;
  }

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

inline NetworkParams make_param_shapes(const NetworkConfig& cfg) {
  cfg.validate();
  const std::size_t L = cfg.levels;
  NetworkParams p;
  p.encoder.resize(L + 1);
  p.decoder.resize(L + 1);
  p.head_hidden.resize(L + 1);
  p.head_out.resize(L + 1);
  p.encoder[1] = Linear(cfg.input_dim, cfg.enc(1));
  for (std::size_t l = 2; l <= L; ++l) p.encoder[l] = Linear(cfg.enc(l - 1) + 3, cfg.enc(l));
  p.decoder[L] = Linear(cfg.enc(L), cfg.dec(L));
  for (std::size_t l = 1; l < L; ++l) p.decoder[l] = Linear(cfg.dec(l + 1) + cfg.enc(l), cfg.dec(l));
  for (std::size_t l = 2; l <= L; ++l) {
    p.head_hidden[l] = Linear(cfg.head_input(l), cfg.head_hidden);
    p.head_out[l] = Linear(cfg.head_hidden, cfg.num_classes);
  }
  if (cfg.fd_attachment == FdAttachment::perceptron) {
    p.fd.resize(L + 1);
    for (std::size_t l = 2; l <= L; ++l) p.fd[l] = Linear(cfg.head_input(l), cfg.head_input(l));
  }
  p.final_hidden = Linear(cfg.dec(1), cfg.head_hidden);
  p.final_out = Linear(cfg.head_hidden, cfg.num_classes);
  return p;
}

/// Uniform weights in [-a, a] with a = sqrt(6 / fan_in) (variance 2 / fan_in),
/// zero biases, drawn in declaration order from `seed`.
inline NetworkParams init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  NetworkParams p = make_param_shapes(cfg);
  Rng rng(seed);
  auto fill = [&](Linear& lin) {
    const double a = std::sqrt(6.0 / static_cast<double>(lin.in));
    for (auto& w : lin.weight) w = rng.uniform(-a, a);
  };
  for (std::size_t l = 1; l < p.encoder.size(); ++l) fill(p.encoder[l]);
  for (std::size_t l = 1; l < p.decoder.size(); ++l) fill(p.decoder[l]);
  for (std::size_t l = 2; l < p.head_hidden.size(); ++l) {
    fill(p.head_hidden[l]);
    fill(p.head_out[l]);
  }
  for (std::size_t l = 2; l < p.fd.size(); ++l) fill(p.fd[l]);
  fill(p.final_hidden);
  fill(p.final_out);
  return p;
}

/// Per-point input features: a constant 1 and the absolute height.
inline Matrix make_input_features(std::span<const Vec3> positions) {
  Matrix x(positions.size(), 2);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = positions[i][2];
  }
  return x;
}

struct ForwardOutput {
  std::vector<Matrix> alpha;        // encoder features by level
  std::vector<Matrix> beta;         // decoder features by level
  std::vector<Matrix> head_logits;  // levels 2..L
  Matrix final_logits;
  PredictionStack pred;
};

/// Everything backward() needs. Holds a pointer to the hierarchy used in the
/// forward pass; that hierarchy must outlive the cache.
struct ActivationCache {
  std::uint64_t params_fingerprint = 0;
  const Hierarchy* hierarchy = nullptr;
  Matrix input;
  std::vector<Matrix> enc_pre;                         // level 1: pre-activation; l >= 2: max-pooled pre-activation
  std::vector<std::vector<std::uint32_t>> enc_argmax;  // l >= 2: winning support index per (point, channel)
  std::vector<Matrix> alpha;
  std::vector<Matrix> dec_pre;
  std::vector<Matrix> beta;
  std::vector<Matrix> head_pre;  // hidden-layer pre-activations of level heads
  Matrix final_pre;
};

/// d(loss)/d(quantity) for each output the losses read. Empty matrices mean zero.
struct LossGradients {
  std::vector<Matrix> head_logits;
  Matrix final_logits;
  std::vector<Matrix> fd_features;
};

namespace detail {

inline Matrix linear_forward(const Linear& lin, const Matrix& x) {
  if (x.cols != lin.in) throw ArgumentError("linear: input width mismatch");
  Matrix y(x.rows, lin.out);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* xr = x.data.data() + r * x.cols;
    double* yr = y.data.data() + r * y.cols;
    for (std::size_t o = 0; o < lin.out; ++o) {
      const double* wr = lin.weight.data() + o * lin.in;
      double s = lin.bias[o];
      for (std::size_t i = 0; i < lin.in; ++i) s += wr[i] * xr[i];
      yr[o] = s;
    }
  }
  return y;
}

/// Accumulates weight/bias gradients for y = W x + b and, if `dx` is given,
/// writes d(loss)/dx.
inline void linear_backward(const Linear& lin, const Matrix& x, const Matrix& dy, Linear& grad, Matrix* dx) {
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* xr = x.data.data() + r * x.cols;
    const double* gr = dy.data.data() + r * dy.cols;
    for (std::size_t o = 0; o < lin.out; ++o) {
      const double g = gr[o];
      if (g == 0.0) continue;
      grad.bias[o] += g;
      double* gw = grad.weight.data() + o * lin.in;
      for (std::size_t i = 0; i < lin.in; ++i) gw[i] += g * xr[i];
    }
  }
  if (dx != nullptr) {
    *dx = Matrix(x.rows, lin.in);
    for (std::size_t r = 0; r < x.rows; ++r) {
      const double* gr = dy.data.data() + r * dy.cols;
      double* dr = dx->data.data() + r * lin.in;
      for (std::size_t o = 0; o < lin.out; ++o) {
        const double g = gr[o];
        if (g == 0.0) continue;
        const double* wr = lin.weight.data() + o * lin.in;
        for (std::size_t i = 0; i < lin.in; ++i) dr[i] += g * wr[i];
      }
    }
  }
}

inline Matrix leaky_relu(const Matrix& z, double slope) {
  Matrix a = z;
  for (auto& v : a.data) v = v > 0.0 ? v : slope * v;
  return a;
}

/// In place: d *= leaky_relu'(z).
inline void leaky_relu_backward(const Matrix& z, Matrix& d, double slope) {
  for (std::size_t n = 0; n < d.data.size(); ++n) {
    if (!(z.data[n] > 0.0)) d.data[n] *= slope;
  }
}

inline void add_into(Matrix& dst, const Matrix& src) {
  if (src.empty()) return;
  if (dst.empty()) {
    dst = src;
    return;
  }
  for (std::size_t n = 0; n < dst.data.size(); ++n) dst.data[n] += src.data[n];
}

}  // namespace detail

/// Runs encoder, decoder and all heads over one scene.
inline std::pair<ForwardOutput, ActivationCache> forward(const NetworkParams& params, const NetworkConfig& cfg,
                                                         const Hierarchy& h, const Matrix& input) {
  const std::size_t L = cfg.levels;
  if (h.num_levels() != L) {
    throw ArgumentError("forward: hierarchy has " + std::to_string(h.num_levels()) + " levels, network expects " +
                        std::to_string(L));
  }
  if (input.rows != h.size(1) || input.cols != cfg.input_dim) {
    throw ArgumentError("forward: input features must be |P^1| x input_dim");
  }
  const double slope = cfg.leaky_slope;

  ActivationCache c;
  c.hierarchy = &h;
  c.input = input;
  c.enc_pre.resize(L + 1);
  c.enc_argmax.resize(L + 1);
  c.alpha.resize(L + 1);
  c.dec_pre.resize(L + 1);
  c.beta.resize(L + 1);
  c.head_pre.resize(L + 1);

  // Encoder.
  c.enc_pre[1] = detail::linear_forward(params.encoder[1], input);
  c.alpha[1] = detail::leaky_relu(c.enc_pre[1], slope);
  for (std::size_t l = 2; l <= L; ++l) {
    const auto& lv = h.level(l);
    const auto& prev_pos = h.level(l - 1).positions;
    const Linear& W = params.encoder[l];
    const std::size_t fin = cfg.enc(l - 1);
    const std::size_t fout = cfg.enc(l);
    // Feature part of the shared MLP, evaluated once per support point.
    Matrix support_term(prev_pos.size(), fout);
    for (std::size_t j = 0; j < prev_pos.size(); ++j) {
      auto a = c.alpha[l - 1].row(j);
      for (std::size_t o = 0; o < fout; ++o) {
        const double* wr = W.weight.data() + o * W.in;
        double s = 0.0;
        for (std::size_t k = 0; k < fin; ++k) s += wr[k] * a[k];
        support_term(j, o) = s;
      }
    }
    Matrix pooled(lv.size(), fout, -std::numeric_limits<double>::infinity());
    std::vector<std::uint32_t> argmax(lv.size() * fout, 0);
    const double inv_r = 1.0 / lv.radius;
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const auto& center = lv.positions[i];
      for (auto j : lv.pool_neighbors[i]) {
        const double off[3] = {(prev_pos[j][0] - center[0]) * inv_r, (prev_pos[j][1] - center[1]) * inv_r,
                               (prev_pos[j][2] - center[2]) * inv_r};
        for (std::size_t o = 0; o < fout; ++o) {
          const double* wr = W.weight.data() + o * W.in + fin;
          const double v = support_term(j, o) + wr[0] * off[0] + wr[1] * off[1] + wr[2] * off[2] + W.bias[o];
          if (v > pooled(i, o)) {
            pooled(i, o) = v;
            argmax[i * fout + o] = j;
          }
        }
      }
    }
    c.enc_pre[l] = std::move(pooled);
    c.enc_argmax[l] = std::move(argmax);
    c.alpha[l] = detail::leaky_relu(c.enc_pre[l], slope);
  }

  // Decoder, from the center-most level outwards.
  c.dec_pre[L] = detail::linear_forward(params.decoder[L], c.alpha[L]);
  c.beta[L] = detail::leaky_relu(c.dec_pre[L], slope);
  for (std::size_t l = L - 1; l >= 1; --l) {
    const Linear& D = params.decoder[l];
    const std::size_t up_w = cfg.dec(l + 1);
    const std::size_t skip_w = cfg.enc(l);
    const std::size_t out_w = cfg.dec(l);
    const auto& up = h.level(l + 1).upsample_map;
    Matrix coarse_term(h.size(l + 1), out_w);
    for (std::size_t j = 0; j < h.size(l + 1); ++j) {
      auto b = c.beta[l + 1].row(j);
      for (std::size_t o = 0; o < out_w; ++o) {
        const double* wr = D.weight.data() + o * D.in;
        double s = 0.0;
        for (std::size_t k = 0; k < up_w; ++k) s += wr[k] * b[k];
        coarse_term(j, o) = s;
      }
    }
    Matrix z(h.size(l), out_w);
    for (std::size_t i = 0; i < h.size(l); ++i) {
      auto a = c.alpha[l].row(i);
      const auto j = up[i];
      for (std::size_t o = 0; o < out_w; ++o) {
        const double* wr = D.weight.data() + o * D.in + up_w;
        double s = coarse_term(j, o) + D.bias[o];
        for (std::size_t k = 0; k < skip_w; ++k) s += wr[k] * a[k];
        z(i, o) = s;
      }
    }
    c.dec_pre[l] = std::move(z);
    c.beta[l] = detail::leaky_relu(c.dec_pre[l], slope);
    if (l == 1) break;
  }

  ForwardOutput out;
  out.head_logits.resize(L + 1);
  out.pred.code_probs.resize(L + 1);
  out.pred.fd_features.resize(L + 1);
  for (std::size_t l = 2; l <= L; ++l) {
    const Matrix& src = cfg.head_side == HeadSide::decoder ? c.beta[l] : c.alpha[l];
    c.head_pre[l] = detail::linear_forward(params.head_hidden[l], src);
    out.head_logits[l] = detail::linear_forward(params.head_out[l], detail::leaky_relu(c.head_pre[l], slope));
    if (cfg.head_kind == HeadKind::sigmoid) {
      Matrix p = out.head_logits[l];
      for (auto& v : p.data) v = sigmoid(v);
      out.pred.code_probs[l] = std::move(p);
    } else {
      softmax_rows(out.head_logits[l], out.pred.code_probs[l]);
    }
    if (cfg.fd_attachment == FdAttachment::identity) {
      out.pred.fd_features[l] = cfg.head_side == HeadSide::decoder ? c.dec_pre[l] : c.enc_pre[l];
    } else {
      out.pred.fd_features[l] = detail::linear_forward(params.fd[l], src);
    }
  }
  c.final_pre = detail::linear_forward(params.final_hidden, c.beta[1]);
  out.final_logits = detail::linear_forward(params.final_out, detail::leaky_relu(c.final_pre, slope));
  softmax_rows(out.final_logits, out.pred.final_probs);
  out.alpha = c.alpha;
  out.beta = c.beta;
  c.params_fingerprint = params.fingerprint();
  return {std::move(out), std::move(c)};
}

/// Reverse-mode gradients of the loss whose partial derivatives are given in
/// `grads`, with respect to every parameter.
inline NetworkParams backward(const NetworkParams& params, const NetworkConfig& cfg, const ActivationCache& c,
                              const LossGradients& grads) {
  if (c.hierarchy == nullptr || c.params_fingerprint != params.fingerprint()) {
    throw ContractError("backward: activation cache does not belong to these parameters");
  }
  const Hierarchy& h = *c.hierarchy;
  const std::size_t L = cfg.levels;
  if (h.num_levels() != L || c.alpha.size() != L + 1) throw ContractError("backward: cache/config level mismatch");
  const double slope = cfg.leaky_slope;
  NetworkParams g = params.zeros_like();

  std::vector<Matrix> d_alpha(L + 1);
  std::vector<Matrix> d_beta(L + 1);
  std::vector<Matrix> d_dec_pre_extra(L + 1);
  std::vector<Matrix> d_enc_pre_extra(L + 1);
  for (std::size_t l = 1; l <= L; ++l) {
    d_alpha[l] = Matrix(c.alpha[l].rows, c.alpha[l].cols);
    d_beta[l] = Matrix(c.beta[l].rows, c.beta[l].cols);
  }

  // Final softmax head.
  if (!grads.final_logits.empty()) {
    require_shape(grads.final_logits, h.size(1), cfg.num_classes, "backward: final logits gradient");
    Matrix dh;
    detail::linear_backward(params.final_out, detail::leaky_relu(c.final_pre, slope), grads.final_logits,
                            g.final_out, &dh);
    detail::leaky_relu_backward(c.final_pre, dh, slope);
    Matrix dsrc;
    detail::linear_backward(params.final_hidden, c.beta[1], dh, g.final_hidden, &dsrc);
    detail::add_into(d_beta[1], dsrc);
  }

  // Level heads and densification.
  for (std::size_t l = 2; l <= L; ++l) {
    const bool dec_side = cfg.head_side == HeadSide::decoder;
    const Matrix& src = dec_side ? c.beta[l] : c.alpha[l];
    Matrix& d_src = dec_side ? d_beta[l] : d_alpha[l];
    if (l < grads.head_logits.size() && !grads.head_logits[l].empty()) {
      require_shape(grads.head_logits[l], h.size(l), cfg.num_classes, "backward: head logits gradient");
      Matrix dh;
      detail::linear_backward(params.head_out[l], detail::leaky_relu(c.head_pre[l], slope), grads.head_logits[l],
                              g.head_out[l], &dh);
      detail::leaky_relu_backward(c.head_pre[l], dh, slope);
      Matrix ds;
      detail::linear_backward(params.head_hidden[l], src, dh, g.head_hidden[l], &ds);
      detail::add_into(d_src, ds);
    }
    if (l < grads.fd_features.size() && !grads.fd_features[l].empty()) {
      require_shape(grads.fd_features[l], h.size(l), cfg.head_input(l), "backward: densification gradient");
      if (cfg.fd_attachment == FdAttachment::identity) {
        detail::add_into(dec_side ? d_dec_pre_extra[l] : d_enc_pre_extra[l], grads.fd_features[l]);
      } else {
        Matrix ds;
        detail::linear_backward(params.fd[l], src, grads.fd_features[l], g.fd[l], &ds);
        detail::add_into(d_src, ds);
      }
    }
  }

  // Decoder, finest level first so each level's upsampled gradient is complete
  // before the coarser level is processed.
  for (std::size_t l = 1; l <= L; ++l) {
    Matrix dz = d_beta[l];
    detail::leaky_relu_backward(c.dec_pre[l], dz, slope);
    detail::add_into(dz, d_dec_pre_extra[l]);
    if (l == L) {
      Matrix da;
      detail::linear_backward(params.decoder[L], c.alpha[L], dz, g.decoder[L], &da);
      detail::add_into(d_alpha[L], da);
      break;
    }
    const std::size_t up_w = cfg.dec(l + 1);
    const std::size_t skip_w = cfg.enc(l);
    const auto& up = h.level(l + 1).upsample_map;
    Matrix v(h.size(l), up_w + skip_w);
    for (std::size_t i = 0; i < h.size(l); ++i) {
      auto b = c.beta[l + 1].row(up[i]);
      auto a = c.alpha[l].row(i);
      std::copy(b.begin(), b.end(), v.row(i).begin());
      std::copy(a.begin(), a.end(), v.row(i).begin() + static_cast<std::ptrdiff_t>(up_w));
    }
    Matrix dv;
    detail::linear_backward(params.decoder[l], v, dz, g.decoder[l], &dv);
    for (std::size_t i = 0; i < h.size(l); ++i) {
      auto src = dv.row(i);
      auto db = d_beta[l + 1].row(up[i]);
      auto da = d_alpha[l].row(i);
      for (std::size_t k = 0; k < up_w; ++k) db[k] += src[k];
      for (std::size_t k = 0; k < skip_w; ++k) da[k] += src[up_w + k];
    }
  }

  // Encoder, coarsest level first. Max-pooling routes each channel's gradient
  // to the neighbor that won the forward max.
  for (std::size_t l = L; l >= 2; --l) {
    const auto& lv = h.level(l);
    const auto& prev_pos = h.level(l - 1).positions;
    const Linear& W = params.encoder[l];
    Linear& gW = g.encoder[l];
    const std::size_t fin = cfg.enc(l - 1);
    const std::size_t fout = cfg.enc(l);
    Matrix dz = d_alpha[l];
    detail::leaky_relu_backward(c.enc_pre[l], dz, slope);
    detail::add_into(dz, d_enc_pre_extra[l]);
    Matrix d_support(prev_pos.size(), fout);
    const double inv_r = 1.0 / lv.radius;
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const auto& center = lv.positions[i];
      for (std::size_t o = 0; o < fout; ++o) {
        const double gv = dz(i, o);
        if (gv == 0.0) continue;
        const auto j = c.enc_argmax[l][i * fout + o];
        d_support(j, o) += gv;
        double* gw = gW.weight.data() + o * W.in + fin;
        for (int d = 0; d < 3; ++d) gw[d] += gv * (prev_pos[j][d] - center[d]) * inv_r;
        gW.bias[o] += gv;
      }
    }
    Matrix& da_prev = d_alpha[l - 1];
    for (std::size_t j = 0; j < prev_pos.size(); ++j) {
      auto a = c.alpha[l - 1].row(j);
      auto da = da_prev.row(j);
      for (std::size_t o = 0; o < fout; ++o) {
        const double gv = d_support(j, o);
        if (gv == 0.0) continue;
        const double* wr = W.weight.data() + o * W.in;
        double* gw = gW.weight.data() + o * W.in;
        for (std::size_t k = 0; k < fin; ++k) {
          gw[k] += gv * a[k];
          da[k] += gv * wr[k];
        }
      }
    }
  }
  Matrix dz1 = d_alpha[1];
  detail::leaky_relu_backward(c.enc_pre[1], dz1, slope);
  detail::linear_backward(params.encoder[1], c.input, dz1, g.encoder[1], nullptr);
  return g;
}

/// Arg-max class per point, ties to the smallest index.
inline std::vector<Label> predict_labels(const Matrix& probs) {
  std::vector<Label> out(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    auto r = probs.row(i);
    std::size_t best = 0;
    for (std::size_t k = 1; k < r.size(); ++k) {
      if (r[k] > r[best]) best = k;
    }
    out[i] = static_cast<Label>(best);
  }
  return out;
}

inline std::vector<Label> predict_labels(const ForwardOutput& out) { return predict_labels(out.pred.final_probs); }

}  // namespace rfcr
