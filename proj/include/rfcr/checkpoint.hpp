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

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rfcr/binary_io.hpp"
#include "rfcr/error.hpp"
#include "rfcr/hierarchy.hpp"
#include "rfcr/network.hpp"
#include "rfcr/training.hpp"

namespace rfcr {

// Checkpoint layout (little-endian):
//   "RFCRCKPT", u32 version
//   network: u64 levels, levels x u64 encoder widths, levels x u64 decoder
//            widths, u64 head_hidden, u64 input_dim, u64 classes,
//            f64 leaky slope, u32 head side, u32 head kind, u32 fd attachment
//   hierarchy: u64 levels, f64 base voxel, f64 ratio, f64 radius factor, u64 cap
//   training echo: u32 target mode, u32 mask size, mask levels (u32),
//                  f64 rfcc threshold
//   u64 tensor count, then per tensor u64 length and f64 values, in
//   NetworkParams declaration order
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NetworkConfig network;
  HierarchyConfig hierarchy;
  TargetMode target_mode = TargetMode::multi_hot;
  std::vector<std::size_t> supervision_mask;
  double rfcc_threshold = 0.5;
  NetworkParams params;

  /// Training settings evaluation needs: targets, supervised levels, threshold.
  TrainConfig eval_config() const {
    TrainConfig tc;
    tc.target_mode = target_mode;
    tc.supervision_mask = supervision_mask;
    tc.rfcc_threshold = rfcc_threshold;
    tc.head_side = network.head_side;
    tc.fd_attachment = network.fd_attachment;
    return tc;
  }
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  using namespace binio;
  put_tag(os, "RFCRCKPT");
  put_u32(os, kCheckpointVersion);
  const auto& n = ck.network;
  put_u64(os, n.levels);
  for (auto w : n.encoder_widths) put_u64(os, w);
  for (auto w : n.decoder_widths) put_u64(os, w);
  put_u64(os, n.head_hidden);
  put_u64(os, n.input_dim);
  put_u64(os, n.num_classes);
  put_f64(os, n.leaky_slope);
  put_u32(os, static_cast<std::uint32_t>(n.head_side));
  put_u32(os, static_cast<std::uint32_t>(n.head_kind));
  put_u32(os, static_cast<std::uint32_t>(n.fd_attachment));
  const auto& h = ck.hierarchy;
  put_u64(os, h.levels);
  put_f64(os, h.base_voxel);
  put_f64(os, h.voxel_ratio);
  put_f64(os, h.radius_factor);
  put_u64(os, h.neighbor_cap);
  put_u32(os, static_cast<std::uint32_t>(ck.target_mode));
  put_u32(os, static_cast<std::uint32_t>(ck.supervision_mask.size()));
  for (auto l : ck.supervision_mask) put_u32(os, static_cast<std::uint32_t>(l));
  put_f64(os, ck.rfcc_threshold);
  std::vector<const std::vector<double>*> tensors;
  ck.params.for_each([&](const std::vector<double>& v) { tensors.push_back(&v); });
  put_u64(os, tensors.size());
  for (const auto* t : tensors) {
    put_u64(os, t->size());
    for (double x : *t) put_f64(os, x);
  }
  if (!os) throw IoError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  binio::Reader in(is);
  in.expect_tag("RFCRCKPT");
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  auto& n = ck.network;
  n.levels = in.count(64);
  n.encoder_widths.resize(n.levels);
  n.decoder_widths.resize(n.levels);
  for (auto& w : n.encoder_widths) w = in.count(1u << 20);
  for (auto& w : n.decoder_widths) w = in.count(1u << 20);
  n.head_hidden = in.count(1u << 20);
  n.input_dim = in.count(1u << 20);
  n.num_classes = in.count(1u << 16);
  n.leaky_slope = in.f64();
  const auto side = in.u32();
  const auto kind = in.u32();
  const auto att = in.u32();
  if (side > 1 || kind > 1 || att > 1) throw FormatError("checkpoint: bad enum value");
  n.head_side = static_cast<HeadSide>(side);
  n.head_kind = static_cast<HeadKind>(kind);
  n.fd_attachment = static_cast<FdAttachment>(att);
  auto& h = ck.hierarchy;
  h.levels = in.count(64);
  h.base_voxel = in.f64();
  h.voxel_ratio = in.f64();
  h.radius_factor = in.f64();
  h.neighbor_cap = in.count(1u << 20);
  const auto mode = in.u32();
  if (mode > 2) throw FormatError("checkpoint: bad target mode");
  ck.target_mode = static_cast<TargetMode>(mode);
  const auto mask_n = in.u32();
  if (mask_n > 64) throw FormatError("checkpoint: bad mask size");
  for (std::uint32_t k = 0; k < mask_n; ++k) ck.supervision_mask.push_back(in.u32());
  ck.rfcc_threshold = in.f64();
  try {
    n.validate();
    h.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid config echo: ") + e.what());
  }
  if (h.levels != n.levels) throw FormatError("checkpoint: hierarchy/network level mismatch");

  ck.params = make_param_shapes(n);
  std::vector<std::vector<double>*> tensors;
  ck.params.for_each([&](std::vector<double>& v) { tensors.push_back(&v); });
  const auto count = in.count(1u << 20);
  if (count != tensors.size()) throw FormatError("checkpoint: tensor count does not match the network config");
  for (auto* t : tensors) {
    const auto len = in.count(1ULL << 32);
    if (len != t->size()) throw FormatError("checkpoint: tensor shape does not match the network config");
    for (auto& x : *t) x = in.f64();
  }
  return ck;
}

}  // namespace rfcr
