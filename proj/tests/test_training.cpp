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

#include <cmath>
#include <vector>

#include "rfcr/training.hpp"
#include "test_util.hpp"

namespace rfcr {
namespace {

using testing::random_cloud;

NetworkConfig small_net(std::size_t levels, std::size_t classes) {
  NetworkConfig c;
  c.levels = levels;
  c.encoder_widths.assign(levels, 6);
  c.decoder_widths.assign(levels, 5);
  c.encoder_widths[0] = 4;
  c.head_hidden = 6;
  c.num_classes = classes;
  return c;
}

HierarchyConfig small_hierarchy(std::size_t levels) {
  HierarchyConfig h;
  h.levels = levels;
  h.base_voxel = 0.3;
  h.neighbor_cap = 8;
  return h;
}

TrainConfig train_config(std::size_t levels) {
  TrainConfig tc;
  tc.supervision_mask.clear();
  for (std::size_t l = 2; l <= levels; ++l) tc.supervision_mask.push_back(l);
  tc.epochs = 3;
  return tc;
}

std::vector<std::vector<double>*> buffers(NetworkParams& p) {
  std::vector<std::vector<double>*> out;
  p.for_each([&](std::vector<double>& v) { out.push_back(&v); });
  return out;
}

TEST(MakeTargets, SingleClassGivesSingleBits) {
  auto cloud = random_cloud(200, 2.0, 1, 3);
  const auto h = build_hierarchy(cloud, small_hierarchy(4));
  const auto t = make_targets(h, cloud.labels, 3, TargetMode::multi_hot);
  ASSERT_TRUE(t.codes.has_value());
  for (std::size_t l = 1; l <= 4; ++l) {
    for (std::size_t i = 0; i < h.size(l); ++i) {
      EXPECT_TRUE(t.codes->level(l).test(i, 0));
      EXPECT_EQ(t.codes->level(l).popcount(i), 1u);
    }
  }
}

TEST(MakeTargets, OvuDuplicatesRowsThroughTheUpsampleMap) {
  const auto cloud = random_cloud(150, 2.0, 3, 4);
  const auto h = build_hierarchy(cloud, small_hierarchy(2));
  const auto t = make_targets(h, cloud.labels, 3, TargetMode::ovu);
  EXPECT_FALSE(t.codes.has_value());
  Matrix rows(h.size(2), 3);
  for (std::size_t n = 0; n < rows.size(); ++n) rows.data[n] = static_cast<double>(n);
  const auto up = upsample_rows(rows, t.chains[2]);
  ASSERT_EQ(up.rows, h.size(1));
  // Inverse-map oracle: each coarse row lands on exactly the fine points that map to it.
  for (std::size_t j = 0; j < h.size(2); ++j) {
    for (std::size_t i = 0; i < h.size(1); ++i) {
      const bool maps = h.level(2).upsample_map[i] == j;
      const bool equal = std::equal(up.row(i).begin(), up.row(i).end(), rows.row(j).begin());
      EXPECT_EQ(maps, equal);
    }
  }
}

TEST(MakeTargets, OneHotIsSubsetOfMultiHot) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto cloud = random_cloud(250, 2.5, 4, seed, 9);
    const auto h = build_hierarchy(cloud, small_hierarchy(4));
    const auto one = make_targets(h, cloud.labels, 4, TargetMode::one_hot);
    const auto multi = make_targets(h, cloud.labels, 4, TargetMode::multi_hot);
    for (std::size_t l = 1; l <= h.num_levels(); ++l) {
      for (std::size_t i = 0; i < h.size(l); ++i) {
        EXPECT_TRUE(one.codes->level(l).is_subset(i, multi.codes->level(l), i));
      }
    }
  }
}

TEST(SgdStep, ZeroGradientsLeaveParamsUnchanged) {
  const auto net = small_net(3, 3);
  auto p = init_params(net, 1);
  const auto before = p;
  MomentumState s;
  sgd_step(p, p.zeros_like(), 0.1, 0.9, s);
  EXPECT_EQ(p, before);
}

TEST(SgdStep, PlainGradientDescent) {
  const auto net = small_net(3, 3);
  auto p = init_params(net, 1);
  auto g = init_params(net, 2);
  const auto before = p;
  MomentumState s;
  sgd_step(p, g, 0.1, 0.0, s);
  auto pb = buffers(p);
  auto bb = buffers(const_cast<NetworkParams&>(before));
  auto gb = buffers(g);
  for (std::size_t t = 0; t < pb.size(); ++t) {
    for (std::size_t n = 0; n < pb[t]->size(); ++n) EXPECT_EQ((*pb[t])[n], (*bb[t])[n] - 0.1 * (*gb[t])[n]);
  }
}

TEST(SgdStep, MomentumRecurrence) {
  const auto net = small_net(2, 2);
  auto p = init_params(net, 3);
  auto g1 = init_params(net, 4);
  auto g2 = init_params(net, 5);
  auto start = p;
  MomentumState s;
  const double lr = 0.05, mu = 0.9;
  sgd_step(p, g1, lr, mu, s);
  sgd_step(p, g2, lr, mu, s);
  auto pb = buffers(p);
  auto sb = buffers(start);
  auto b1 = buffers(g1);
  auto b2 = buffers(g2);
  for (std::size_t t = 0; t < pb.size(); ++t) {
    for (std::size_t n = 0; n < pb[t]->size(); ++n) {
      const double v1 = (*b1[t])[n];
      const double v2 = mu * v1 + (*b2[t])[n];
      EXPECT_NEAR((*pb[t])[n], (*sb[t])[n] - lr * v1 - lr * v2, 1e-12);
    }
  }
}

TEST(SgdStep, ShapeMismatchIsAContractViolation) {
  auto p = init_params(small_net(3, 3), 1);
  const auto g = init_params(small_net(3, 4), 1);
  MomentumState s;
  EXPECT_THROW(sgd_step(p, g, 0.1, 0.9, s), ContractError);
}

TEST(LearningRate, StepDecay) {
  TrainConfig tc;
  tc.learning_rate = 0.1;
  tc.lr_decay = 0.5;
  tc.lr_decay_every = 10;
  EXPECT_DOUBLE_EQ(learning_rate_at(tc, 1), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate_at(tc, 10), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate_at(tc, 11), 0.05);
  EXPECT_DOUBLE_EQ(learning_rate_at(tc, 31), 0.0125);
  tc.lr_decay_every = 0;
  EXPECT_DOUBLE_EQ(learning_rate_at(tc, 100), 0.1);
}

/// Every parameter gradient of the total objective against central differences.
void check_total_gradient(const NetworkConfig& net, TrainConfig tc, std::uint64_t seed) {
  const auto cloud = random_cloud(55, 1.6, net.num_classes, seed, 13);
  const auto scene = prepare_scene(cloud, small_hierarchy(net.levels), net.num_classes, tc.target_mode);
  const auto cfg = network_config_for(net, tc);
  auto params = init_params(cfg, seed);
  const auto step = loss_and_gradients(params, cfg, scene, tc);
  auto grads = step.grads;
  auto pb = buffers(params);
  auto gb = buffers(grads);
  const double h = 1e-5;
  for (std::size_t t = 0; t < pb.size(); ++t) {
    for (std::size_t n = 0; n < pb[t]->size(); ++n) {
      double& w = (*pb[t])[n];
      const double saved = w;
      w = saved + h;
      const double up = loss_and_gradients(params, cfg, scene, tc).report.total;
      w = saved - h;
      const double down = loss_and_gradients(params, cfg, scene, tc).report.total;
      w = saved;
      const double num = (up - down) / (2 * h);
      const double ana = (*gb[t])[n];
      const double err = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
      EXPECT_LT(err, 1e-4) << "tensor " << t << " entry " << n << ' ' << ana << " vs " << num;
    }
  }
}

TEST(TotalGradient, MultiHot) { check_total_gradient(small_net(3, 3), train_config(3), 21); }

TEST(TotalGradient, OneHotEncoderSide) {
  auto tc = train_config(3);
  tc.target_mode = TargetMode::one_hot;
  tc.head_side = HeadSide::encoder;
  check_total_gradient(small_net(3, 3), tc, 22);
}

TEST(TotalGradient, Upsampled) {
  auto tc = train_config(3);
  tc.target_mode = TargetMode::ovu;
  check_total_gradient(small_net(3, 3), tc, 23);
}

TEST(TotalGradient, PerceptronAttachmentPartialMask) {
  auto tc = train_config(4);
  tc.fd_attachment = FdAttachment::perceptron;
  tc.supervision_mask = {2, 4};
  tc.lambda1 = 0.7;
  tc.lambda2 = 1.3;
  check_total_gradient(small_net(4, 2), tc, 24);
}

TEST(Ablation, BaselinePathIsBitExact) {
  const auto net = small_net(3, 3);
  const auto cloud = random_cloud(120, 2.0, 3, 5, 7);
  auto tc = train_config(3);
  tc.lambda1 = 0.0;
  tc.lambda2 = 0.0;
  tc.fd_enabled = false;
  tc.supervision_mask.clear();
  const auto scene = prepare_scene(cloud, small_hierarchy(3), 3, tc.target_mode);
  const auto cfg = network_config_for(net, tc);
  const auto params = init_params(cfg, 9);
  const auto step = loss_and_gradients(params, cfg, scene, tc);

  auto [out, cache] = forward(params, cfg, scene.hierarchy, scene.input);
  const auto sem = semantic_ce(out.pred.final_probs, cloud.labels);
  LossGradients lg;
  lg.final_logits = sem.logit_grad;
  lg.head_logits.resize(4);
  lg.fd_features.resize(4);
  const auto expect = backward(params, cfg, cache, lg);
  EXPECT_EQ(step.report.total, sem.value);
  EXPECT_EQ(step.report.reasoning, 0.0);
  EXPECT_EQ(step.grads, expect);
}

TEST(Ablation, OvuNeverNeedsCodes) {
  const auto cloud = random_cloud(100, 2.0, 3, 6);
  auto tc = train_config(3);
  tc.target_mode = TargetMode::ovu;
  auto scene = prepare_scene(cloud, small_hierarchy(3), 3, tc.target_mode);
  EXPECT_FALSE(scene.targets.codes.has_value());
  const auto cfg = network_config_for(small_net(3, 3), tc);
  EXPECT_NO_THROW(loss_and_gradients(init_params(cfg, 1), cfg, scene, tc));
}

DatasetSplit tiny_split(std::uint64_t seed) {
  DatasetSplit s;
  for (std::uint64_t k = 0; k < 3; ++k) s.train.push_back(random_cloud(120, 2.0, 3, seed + k, 10));
  s.val.push_back(random_cloud(100, 2.0, 3, seed + 10));
  return s;
}

TEST(Train, ZeroLearningRateKeepsInitialization) {
  const auto net = small_net(3, 3);
  auto tc = train_config(3);
  tc.learning_rate = 0.0;
  const auto r = train(tiny_split(1), small_hierarchy(3), net, tc);
  EXPECT_EQ(r.params, init_params(network_config_for(net, tc), derive_seed(tc.seed, 1)));
  EXPECT_EQ(r.record.epochs.size(), 3u);
}

TEST(Train, SeedDeterminism) {
  const auto net = small_net(3, 3);
  auto tc = train_config(3);
  tc.batch_size = 2;
  const auto a = train(tiny_split(2), small_hierarchy(3), net, tc);
  const auto b = train(tiny_split(2), small_hierarchy(3), net, tc);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(metrics_csv(a.record), metrics_csv(b.record));
  tc.seed = 2;
  const auto c = train(tiny_split(2), small_hierarchy(3), net, tc);
  EXPECT_NE(a.params, c.params);
}

TEST(Train, BatchAveragesSceneGradients) {
  const auto net = small_net(2, 3);
  auto tc = train_config(2);
  tc.epochs = 1;
  tc.batch_size = 3;
  tc.momentum = 0.0;
  tc.weight_decay = 0.0;
  tc.learning_rate = 0.1;
  const auto split = tiny_split(3);
  const auto r = train(split, small_hierarchy(2), net, tc);

  const auto cfg = network_config_for(net, tc);
  auto expect = init_params(cfg, derive_seed(tc.seed, 1));
  auto sum = expect.zeros_like();
  for (const auto& c : split.train) {
    const auto scene = prepare_scene(c, small_hierarchy(2), 3, tc.target_mode);
    accumulate(sum, loss_and_gradients(expect, cfg, scene, tc).grads);
  }
  auto eb = buffers(expect);
  auto sb = buffers(sum);
  auto rb = buffers(const_cast<NetworkParams&>(r.params));
  for (std::size_t t = 0; t < eb.size(); ++t) {
    for (std::size_t n = 0; n < eb[t]->size(); ++n) {
      EXPECT_NEAR((*rb[t])[n], (*eb[t])[n] - 0.1 * (*sb[t])[n] / 3.0, 1e-12);
    }
  }
}

TEST(Train, WeightDecayShrinksWeightsOnly) {
  const auto net = small_net(2, 3);
  auto tc = train_config(2);
  tc.epochs = 1;
  tc.batch_size = 3;
  tc.momentum = 0.0;
  tc.learning_rate = 0.1;
  tc.weight_decay = 0.0;
  const auto split = tiny_split(3);
  auto plain = train(split, small_hierarchy(2), net, tc).params;
  tc.weight_decay = 0.01;
  auto decayed = train(split, small_hierarchy(2), net, tc).params;
  auto init = init_params(network_config_for(net, tc), derive_seed(tc.seed, 1));
  auto pb = buffers(plain);
  auto db = buffers(decayed);
  auto ib = buffers(init);
  for (std::size_t t = 0; t < pb.size(); ++t) {
    // Buffers alternate weight, bias.
    const double rate = t % 2 == 0 ? 0.1 * 0.01 : 0.0;
    for (std::size_t n = 0; n < pb[t]->size(); ++n) {
      EXPECT_NEAR((*db[t])[n], (*pb[t])[n] - rate * (*ib[t])[n], 1e-12) << t << ' ' << n;
    }
  }
}

TEST(Train, DivergenceAborts) {
  auto tc = train_config(3);
  tc.learning_rate = 1e6;
  tc.epochs = 20;
  try {
    train(tiny_split(4), small_hierarchy(3), small_net(3, 3), tc);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_FALSE(e.record().abort_reason.empty());
    EXPECT_LT(e.record().epochs.size(), 20u);
  }
}

TEST(Train, RecordsEveryEpoch) {
  auto tc = train_config(3);
  tc.epochs = 4;
  const auto r = train(tiny_split(5), small_hierarchy(3), small_net(3, 3), tc);
  ASSERT_EQ(r.record.epochs.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) {
    const auto& m = r.record.epochs[e];
    EXPECT_EQ(m.epoch, e + 1);
    EXPECT_TRUE(std::isfinite(m.loss.total));
    ASSERT_TRUE(m.val_miou.has_value());
    ASSERT_TRUE(m.rfcc_oa.has_value());
    EXPECT_GE(*m.rfcc_oa, 0.0);
    EXPECT_LE(*m.rfcc_oa, 1.0);
  }
  const auto csv = metrics_csv(r.record);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,L_S,L_R,L_F,total,mIoU,rfcc_oa");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Train, SeparableToySceneConverges) {
  DatasetSplit s;
  s.train.push_back(testing::separable_toy_scene(1));
  s.val = s.train;
  TrainConfig tc;
  tc.epochs = 200;
  NetworkConfig net;
  net.num_classes = 2;
  std::size_t first_perfect = 0;
  const auto r = train(s, HierarchyConfig{}, net, tc, [&](const EpochMetrics& m) {
    if (!first_perfect && m.val_miou && *m.val_miou == 1.0) first_perfect = m.epoch;
  });
  EXPECT_GT(first_perfect, 0u);
  EXPECT_LE(first_perfect, 200u);
}

TEST(Train, RejectsBadConfig) {
  auto tc = train_config(3);
  tc.supervision_mask = {1};
  EXPECT_THROW(train(tiny_split(6), small_hierarchy(3), small_net(3, 3), tc), ConfigError);
  tc = train_config(3);
  tc.lambda1 = -1;
  EXPECT_THROW(train(tiny_split(6), small_hierarchy(3), small_net(3, 3), tc), ConfigError);
  EXPECT_THROW(train(DatasetSplit{}, small_hierarchy(3), small_net(3, 3), train_config(3)), ArgumentError);
}

}  // namespace
}  // namespace rfcr
