//
// Copyright 2026 The seg-privacy-lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "segpriv/defences.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "segpriv/attacks.h"
#include "test_util.h"

namespace segpriv {
namespace {

using ::testing::ElementsAre;

Tensor Binary2x2(float a, float b, float c, float d) {
  Tensor t(1, 2, 2);
  t.at(0, 0, 0) = a;
  t.at(0, 0, 1) = b;
  t.at(0, 1, 0) = c;
  t.at(0, 1, 1) = d;
  return t;
}

Dataset SyntheticSet(int n, uint64_t seed) {
  SyntheticTaskSpec spec;
  spec.seed = seed;
  return *GenerateSyntheticDataset(spec, n);
}

SegModelConfig TinyModel() {
  SegModelConfig c;
  c.base_width = 4;
  return c;
}

// ---------------------------------------------------------------- argmax

TEST(ArgmaxTest, BinaryRoundsHalfUp) {
  const LabelMask m = ArgmaxFilter(Binary2x2(0.7f, 0.2f, 0.5f, 0.49f));
  EXPECT_THAT(std::vector<int>(m.labels().begin(), m.labels().end()),
              ElementsAre(1, 0, 1, 0));
}

TEST(ArgmaxTest, MultiClassPicksLargest) {
  Tensor p(3, 1, 1);
  p.at(0, 0, 0) = 0.2f;
  p.at(1, 0, 0) = 0.5f;
  p.at(2, 0, 0) = 0.3f;
  EXPECT_EQ(ArgmaxFilter(p).at(0, 0), 1);
}

TEST(ArgmaxTest, OneHotIsFixedPoint) {
  Rng rng(1);
  for (int k : {2, 3, 5}) {
    const LabelMask labels = testing::RandomMask(6, 7, k, rng);
    const Tensor onehot = LabelsToOneHot(labels, k);
    EXPECT_EQ(onehot.channels(), OutputChannels(k));
    EXPECT_EQ(ArgmaxFilter(onehot), labels);
    // Idempotent under re-encoding.
    EXPECT_EQ(LabelsToOneHot(ArgmaxFilter(onehot), k), onehot);
  }
}

TEST(ArgmaxTest, DefendedModelHidesProbabilities) {
  testing::IdentityOracle inner;
  ArgmaxDefendedModel defended(inner);
  auto probs = defended.PredictProbs(Binary2x2(0.7f, 0.2f, 0.5f, 0.49f));
  ASSERT_TRUE(probs.ok());
  EXPECT_EQ(*probs, Binary2x2(1, 0, 1, 0));
  ImageMaskPair pair{"a", Binary2x2(0.7f, 0.2f, 0.5f, 0.49f), LabelMask(2, 2)};
  pair.mask.at(0, 0) = 1;
  pair.mask.at(1, 0) = 1;
  EXPECT_DOUBLE_EQ(*defended.SampleLoss(pair), 0.0);
  pair.mask.at(1, 1) = 1;  // one wrong pixel of four hits the floor
  EXPECT_NEAR(*defended.SampleLoss(pair), -std::log(kProbabilityFloor) / 4, 1e-9);
}

// ------------------------------------------------------------------ crop

TEST(CropTest, FullSizeIsIdentity) {
  Rng rng(2);
  const Dataset batch = {testing::RandomPair("a", 8, 8, rng)};
  auto out = RandomCropBatch(batch, 8, 8, rng);
  ASSERT_TRUE(out.ok());
  EXPECT_EQ((*out)[0].image, batch[0].image);
  EXPECT_EQ((*out)[0].mask, batch[0].mask);
}

TEST(CropTest, ImageAndMaskStayAligned) {
  Rng rng(3);
  ImageMaskPair p{"a", Tensor(1, 16, 16), LabelMask(16, 16)};
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      p.image.at(0, y, x) = (y * 16 + x) / 256.0f;
      p.mask.at(y, x) = static_cast<uint8_t>(y * 16 + x);
    }
  }
  for (int trial = 0; trial < 50; ++trial) {
    auto out = RandomCropBatch(std::span(&p, 1), 8, 8, rng);
    ASSERT_TRUE(out.ok());
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        EXPECT_EQ((*out)[0].image.at(0, y, x) * 256.0f, (*out)[0].mask.at(y, x));
      }
    }
  }
}

TEST(CropTest, CropPairCopiesWindow) {
  Rng rng(4);
  const ImageMaskPair p = testing::RandomPair("a", 6, 6, rng);
  const ImageMaskPair c = CropPair(p, 1, 2, 3, 4);
  ASSERT_EQ(c.image.height(), 3);
  ASSERT_EQ(c.image.width(), 4);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) {
      EXPECT_EQ(c.image.at(0, y, x), p.image.at(0, y + 1, x + 2));
      EXPECT_EQ(c.mask.at(y, x), p.mask.at(y + 1, x + 2));
    }
  }
}

TEST(CropTest, OversizedCropIsAnError) {
  Rng rng(5);
  const Dataset batch = {testing::RandomPair("a", 8, 8, rng)};
  EXPECT_FALSE(RandomCropBatch(batch, 9, 4, rng).ok());
  EXPECT_FALSE(RandomCropBatch(batch, 4, 9, rng).ok());
}

TEST(CropTest, OffsetsAreUniform) {
  // 8x8 image, 4x4 crop: 5x5 = 25 offsets. The top-left pixel value encodes
  // the offset.
  ImageMaskPair p{"a", Tensor(1, 8, 8), LabelMask(8, 8)};
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) p.image.at(0, y, x) = (y * 8 + x) / 64.0f;
  }
  Rng rng(6);
  std::vector<int> counts(25, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto out = RandomCropBatch(std::span(&p, 1), 4, 4, rng);
    ASSERT_TRUE(out.ok());
    const int v = static_cast<int>(std::lround((*out)[0].image.at(0, 0, 0) * 64.0f));
    const int y = v / 8, x = v % 8;
    ASSERT_LE(y, 4);
    ASSERT_LE(x, 4);
    ++counts[y * 5 + x];
  }
  double chi2 = 0.0;
  const double expected = draws / 25.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // Upper 0.1% point of chi-square with 24 degrees of freedom.
  EXPECT_LT(chi2, 51.18);
}

// ---------------------------------------------------------------- mix-up

Dataset ColumnCoded(int k, int h, int w) {
  Dataset batch;
  for (int i = 0; i < k; ++i) {
    ImageMaskPair p{"p" + std::to_string(i), Tensor(2, h, w), LabelMask(h, w)};
    for (int c = 0; c < 2; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) p.image.at(c, y, x) = (i * 100 + x + 0.5f * c) / 1000.0f;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) p.mask.at(y, x) = static_cast<uint8_t>(i);
    }
    batch.push_back(std::move(p));
  }
  return batch;
}

TEST(MixupTest, ForcedSplitAtThree) {
  const Dataset batch = ColumnCoded(3, 2, 4);
  const MixupPlan plan{{{2, 0, 1}, {1, 2, 0}}, {3}};
  auto out = ApplyMixup(batch, plan);
  ASSERT_TRUE(out.ok());
  for (size_t i = 0; i < 3; ++i) {
    const ImageMaskPair& mixed = (*out)[i];
    for (int x = 0; x < 4; ++x) {
      const size_t src = x < 2 ? plan.permutations[0][i] : plan.permutations[1][i];
      for (int y = 0; y < 2; ++y) {
        EXPECT_EQ(mixed.mask.at(y, x), src);
        for (int c = 0; c < 2; ++c) EXPECT_EQ(mixed.image.at(c, y, x), batch[src].image.at(c, y, x));
      }
    }
    EXPECT_EQ(mixed.id, batch[plan.permutations[0][i]].id + "+" +
                            batch[plan.permutations[1][i]].id);
  }
}

TEST(MixupTest, SplitAtOneTakesSecondCopy) {
  const Dataset batch = ColumnCoded(3, 3, 5);
  const MixupPlan plan{{{2, 0, 1}, {1, 2, 0}}, {1}};
  auto out = ApplyMixup(batch, plan);
  ASSERT_TRUE(out.ok());
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_EQ((*out)[i].image, batch[plan.permutations[1][i]].image);
    EXPECT_EQ((*out)[i].mask, batch[plan.permutations[1][i]].mask);
  }
}

TEST(MixupTest, SplitAtWidthKeepsLastColumnFromSecondCopy) {
  const Dataset batch = ColumnCoded(2, 2, 5);
  const MixupPlan plan{{{0, 1}, {1, 0}}, {5}};
  auto out = ApplyMixup(batch, plan);
  ASSERT_TRUE(out.ok());
  for (int x = 0; x < 5; ++x) EXPECT_EQ((*out)[0].mask.at(0, x), x < 4 ? 0 : 1);
}

TEST(MixupTest, IdentityPermutationsReproduceInput) {
  const Dataset batch = ColumnCoded(4, 2, 6);
  const MixupPlan plan{{{0, 1, 2, 3}, {0, 1, 2, 3}}, {4}};
  auto out = ApplyMixup(batch, plan);
  ASSERT_TRUE(out.ok());
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_EQ((*out)[i].image, batch[i].image);
    EXPECT_EQ((*out)[i].mask, batch[i].mask);
  }
}

TEST(MixupTest, RandomBatchesColumnsComeFromDeclaredSource) {
  Rng rng(7);
  const MixupConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const Dataset batch = ColumnCoded(1 + trial % 8, 3, 16);
    auto plan = DrawMixupPlan(batch.size(), 16, cfg, rng);
    ASSERT_TRUE(plan.ok());
    ASSERT_EQ(plan->split_columns.size(), 1u);
    const int gamma = plan->split_columns[0];
    ASSERT_GE(gamma, 1);
    ASSERT_LE(gamma, 16);
    auto out = ApplyMixup(batch, *plan);
    ASSERT_TRUE(out.ok());
    ASSERT_EQ(out->size(), batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
      for (int x = 0; x < 16; ++x) {
        const size_t src = plan->permutations[x + 1 < gamma ? 0 : 1][i];
        for (int y = 0; y < 3; ++y) {
          ASSERT_EQ((*out)[i].mask.at(y, x), batch[src].mask.at(y, x));
          for (int c = 0; c < 2; ++c) {
            ASSERT_EQ((*out)[i].image.at(c, y, x), batch[src].image.at(c, y, x));
          }
        }
      }
    }
  }
}

TEST(MixupTest, PermutationsArePermutations) {
  Rng rng(8);
  auto plan = DrawMixupPlan(10, 32, MixupConfig{3, 2, 2}, rng);
  ASSERT_TRUE(plan.ok());
  ASSERT_EQ(plan->permutations.size(), 3u);
  EXPECT_EQ(plan->split_columns.size(), 2u);
  EXPECT_TRUE(std::is_sorted(plan->split_columns.begin(), plan->split_columns.end()));
  for (auto perm : plan->permutations) {
    std::sort(perm.begin(), perm.end());
    for (size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(perm[i], i);
  }
}

TEST(MixupTest, Errors) {
  Dataset batch = ColumnCoded(2, 2, 4);
  batch[1].image = Tensor(2, 2, 5);
  Rng rng(9);
  EXPECT_FALSE(MixupBatch(batch, MixupConfig{}, rng).ok());
  EXPECT_FALSE(ValidateMixupConfig({1, 2, 2}).ok());
  EXPECT_FALSE(ValidateMixupConfig({2, 0, 2}).ok());
  const Dataset good = ColumnCoded(2, 2, 4);
  EXPECT_FALSE(ApplyMixup(good, MixupPlan{{{0, 1}, {1, 0}}, {0}}).ok());
  EXPECT_FALSE(ApplyMixup(good, MixupPlan{{{0, 1}, {1, 2}}, {2}}).ok());
  EXPECT_FALSE(ApplyMixup(good, MixupPlan{{{0, 1}}, {}}).ok());
}

// --------------------------------------------------------------- min-max

TEST(MinMaxTest, RegularisedLossArithmetic) {
  const MinMaxConfig cfg{0.05, 1e-3};
  const std::vector<double> scores = {0.6, 1.0};
  EXPECT_NEAR(MinMaxRegularisedLoss(1.0, scores, cfg), 1.04, 1e-12);
  EXPECT_DOUBLE_EQ(MinMaxRegularisedLoss(1.0, scores, {0.0, 1e-3}), 1.0);
  const std::vector<double> zeros = {0.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(MinMaxRegularisedLoss(0.7, zeros, cfg), 0.7);
}

class MinMaxGradientTest : public ::testing::TestWithParam<int> {};

TEST_P(MinMaxGradientTest, MatchesFiniteDifferences) {
  const int k = GetParam();
  SegModelConfig mc = TinyModel();
  mc.num_classes = k;
  mc.height = mc.width = 8;
  Rng rng(10);
  Dataset nonmembers = {testing::RandomPair("n", 8, 8, rng, k)};
  auto hook = MinMaxHook::Create({0.5, 1e-3}, mc, nonmembers, 3);
  ASSERT_TRUE(hook.ok()) << hook.status();
  const ImageMaskPair sample = testing::RandomPair("m", 8, 8, rng, k);
  const Tensor logits = testing::RandomTensor(OutputChannels(k), 8, 8, rng, -2, 2);
  Tensor grad(logits.channels(), 8, 8);
  const double value = (*hook)->AddLossGradient(sample, logits, 1, grad);
  EXPECT_GT(value, 0.0);
  const double eps = 1e-2;
  for (size_t i = 0; i < logits.size(); i += 7) {
    Tensor plus = logits, minus = logits, scratch(logits.channels(), 8, 8);
    plus.values()[i] += eps;
    minus.values()[i] -= eps;
    const double fd = ((*hook)->AddLossGradient(sample, plus, 1, scratch) -
                       (*hook)->AddLossGradient(sample, minus, 1, scratch)) /
                      (2 * eps);
    EXPECT_NEAR(grad.values()[i], fd, 1e-4 + 0.05 * std::abs(fd)) << "index " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(Classes, MinMaxGradientTest, ::testing::Values(2, 3));

TEST(MinMaxTest, ZeroLambdaReproducesUndefendedTraining) {
  const Dataset train = SyntheticSet(16, 11);
  const Dataset test = SyntheticSet(4, 12);
  SegModelConfig mc = TinyModel();
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.seed = 5;
  auto plain = TrainSegmentation(mc, train, test, tc);
  ASSERT_TRUE(plain.ok());
  auto hook = MinMaxHook::Create({0.0, 1e-3}, mc, test, 9);
  ASSERT_TRUE(hook.ok());
  tc.hooks = {*hook};
  auto defended = TrainSegmentation(mc, train, test, tc);
  ASSERT_TRUE(defended.ok());
  EXPECT_EQ(plain->history.loss, defended->history.loss);
  EXPECT_EQ(plain->history.train_dice, defended->history.train_dice);
  const auto a = plain->model.parameters(), b = defended->model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
}

TEST(MinMaxTest, CreateRejectsBadInputs) {
  EXPECT_FALSE(MinMaxHook::Create({-1.0, 1e-3}, TinyModel(), SyntheticSet(2, 1), 1).ok());
  EXPECT_FALSE(MinMaxHook::Create({0.05, 0.0}, TinyModel(), SyntheticSet(2, 1), 1).ok());
  EXPECT_FALSE(MinMaxHook::Create({0.05, 1e-3}, TinyModel(), {}, 1).ok());
}

// -------------------------------------------------------------------- DP

TEST(DpTrainTest, CalibratesToTarget) {
  const Dataset train = SyntheticSet(16, 13);
  const Dataset test = SyntheticSet(4, 14);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  DPConfig dp;
  dp.learning_rate = 4e-4;
  auto r = DpTrain(TinyModel(), train, test, dp, tc);
  ASSERT_TRUE(r.ok()) << r.status();
  EXPECT_DOUBLE_EQ(r->sampling_rate, 0.25);
  EXPECT_EQ(r->steps, 8);
  EXPECT_GT(r->noise_multiplier, 0.0);
  EXPECT_LE(r->epsilon, dp.target_epsilon);
  EXPECT_EQ(ToJson(dp, *r)["learning_rate"], 4e-4);
}

TEST(DpTrainTest, InvalidTargetsRejected) {
  DPConfig dp;
  dp.target_delta = 1.5;
  EXPECT_FALSE(DpTrain(TinyModel(), SyntheticSet(4, 1), SyntheticSet(2, 2), dp, {}).ok());
}

// -------------------------------------------------------------------- KD

TEST(KdSelectionTest, FilterRule) {
  const std::vector<double> zeros = {0.0, 0.0, 0.0};
  EXPECT_THAT(*SelectDistillationSet(zeros, 0.1), ElementsAre(0, 1, 2));
  const std::vector<double> mixed = {0.3, 0.2, 0.5};
  EXPECT_THAT(*SelectDistillationSet(mixed, 0.3), ElementsAre(0, 1));
  EXPECT_EQ(SelectDistillationSet(mixed, 0.1).status().code(),
            absl::StatusCode::kFailedPrecondition);
}

TEST(KdProtectTest, StudentNeverSeesPrivateIds) {
  SyntheticTaskSpec spec;
  spec.seed = 15;
  const Dataset all = *GenerateSyntheticDataset(spec, 36);
  const Dataset priv(all.begin(), all.begin() + 12);
  const Dataset ref(all.begin() + 12, all.begin() + 30);
  const Dataset val(all.begin() + 30, all.end());
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.seed = 3;
  auto r = KdProtect(TinyModel(), priv, ref, val, tc);
  ASSERT_TRUE(r.ok()) << r.status();
  EXPECT_GT(r->validation_loss, 0.0);
  ASSERT_FALSE(r->selected_ids.empty());
  std::set<std::string> private_ids;
  for (const auto& p : priv) private_ids.insert(p.id);
  std::set<std::string> ref_ids;
  for (const auto& p : ref) ref_ids.insert(p.id);
  for (const auto& id : r->selected_ids) {
    EXPECT_FALSE(private_ids.contains(id));
    EXPECT_TRUE(ref_ids.contains(id));
  }
}

TEST(KdProtectTest, OverlapRejected) {
  const Dataset d = SyntheticSet(6, 16);
  EXPECT_FALSE(KdProtect(TinyModel(), d, d, d, TrainConfig{}).ok());
}

}  // namespace
}  // namespace segpriv
