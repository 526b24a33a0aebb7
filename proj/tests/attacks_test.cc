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

#include "segpriv/attacks.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace segpriv {
namespace {

using ::testing::HasSubstr;

Dataset MakeSet(const std::string& prefix, int n, Rng& rng, int side = 4) {
  Dataset set;
  for (int i = 0; i < n; ++i) {
    set.push_back(testing::RandomPair(prefix + std::to_string(i), side, side, rng));
  }
  return set;
}

// Pairs whose first pixel carries the loss reported by PixelLossOracle.
Dataset LossSet(const std::string& prefix, const std::vector<double>& losses) {
  Dataset set;
  for (size_t i = 0; i < losses.size(); ++i) {
    ImageMaskPair p{prefix + std::to_string(i), Tensor(1, 4, 4), LabelMask(4, 4)};
    p.image.at(0, 0, 0) = static_cast<float>(losses[i]);
    set.push_back(std::move(p));
  }
  return set;
}

TEST(AttackTypeTest, NamesRoundTrip) {
  for (AttackType t : {AttackType::kTypeI, AttackType::kTypeII, AttackType::kGlobalLoss}) {
    auto parsed = ParseAttackType(AttackTypeName(t));
    ASSERT_TRUE(parsed.ok());
    EXPECT_EQ(*parsed, t);
  }
  EXPECT_FALSE(ParseAttackType("type3").ok());
}

TEST(ShadowSettingTest, ModelDependentUsesVictimEncoder) {
  ShadowSetting s{ShadowMode::kModelDependent, "vgg-lite"};
  EXPECT_EQ(*ResolveShadowEncoder(s, "resnet-lite"), "resnet-lite");
  s.mode = ShadowMode::kModelAgnostic;
  EXPECT_EQ(*ResolveShadowEncoder(s, "resnet-lite"), "vgg-lite");
  s.shadow_encoder_id = "nope";
  EXPECT_FALSE(ResolveShadowEncoder(s, "resnet-lite").ok());
}

TEST(RecordTest, ChannelCounts) {
  Rng rng(1);
  const Tensor binary = testing::RandomTensor(1, 8, 8, rng);
  const Tensor multi = testing::RandomTensor(20, 8, 8, rng);
  EXPECT_EQ(BuildType1Record("a", binary, 1).input.channels(), 1);
  EXPECT_EQ(BuildType1Record("a", multi, 0).input.channels(), 20);
  EXPECT_EQ(BuildType1Record("a", multi, 0).label, 0);
  EXPECT_EQ(BuildType2Record("a", binary, LabelMask(8, 8), 2, 1)->input.channels(), 2);
  EXPECT_EQ(BuildType2Record("a", multi, LabelMask(8, 8), 20, 1)->input.channels(), 40);
}

TEST(RecordTest, TypeTwoExtendsTypeOne) {
  Rng rng(2);
  const Tensor pred = testing::RandomTensor(3, 5, 6, rng);
  const LabelMask gt = testing::RandomMask(5, 6, 3, rng);
  const AttackRecord r1 = BuildType1Record("x", pred, 1);
  auto r2 = BuildType2Record("x", pred, gt, 3, 1);
  ASSERT_TRUE(r2.ok());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 6; ++x) {
        EXPECT_EQ(r2->input.at(c, y, x), r1.input.at(c, y, x));
        EXPECT_EQ(r2->input.at(3 + c, y, x), gt.at(y, x) == c ? 1.0f : 0.0f);
      }
    }
  }
}

TEST(RecordTest, SpatialMismatchIsAnError) {
  auto r = BuildType2Record("x", Tensor(1, 4, 4), LabelMask(4, 5), 2, 1);
  EXPECT_EQ(r.status().code(), absl::StatusCode::kInvalidArgument);
}

TEST(RecordTest, SerialisedTypeTwoBytesArePinned) {
  Tensor pred(1, 2, 2);
  pred.at(0, 0, 0) = 0.25f;
  pred.at(0, 0, 1) = 0.5f;
  pred.at(0, 1, 0) = 0.75f;
  pred.at(0, 1, 1) = 1.0f;
  LabelMask gt(2, 2);
  gt.at(0, 1) = 1;
  gt.at(1, 0) = 1;
  auto record = BuildType2Record("golden", pred, gt, 2, 1);
  ASSERT_TRUE(record.ok());
  const auto path = std::filesystem::path(::testing::TempDir()) / "golden.tensor";
  ASSERT_TRUE(WriteTensor(path, record->input).ok());
  std::ifstream in(path, std::ios::binary);
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const std::vector<unsigned char> expected = {
      'S', 'E', 'G', 'P', 'R', 'I', 'V', 'T',           // magic
      2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0,               // C, H, W
      0x00, 0x00, 0x80, 0x3e, 0x00, 0x00, 0x00, 0x3f,   // 0.25, 0.5
      0x00, 0x00, 0x40, 0x3f, 0x00, 0x00, 0x80, 0x3f,   // 0.75, 1.0
      0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3f,   // gt 0, 1
      0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x00};  // gt 1, 0
  EXPECT_EQ(bytes, expected);
}

TEST(AssembleTest, BalancedSetsOfEqualSize) {
  Rng rng(3);
  const Dataset train = MakeSet("t", 500, rng), test = MakeSet("s", 500, rng);
  testing::IdentityOracle shadow;
  auto records = AssembleAttackDataset(shadow, train, test, AttackType::kTypeII, true, 1);
  ASSERT_TRUE(records.ok());
  ASSERT_EQ(records->size(), 1000u);
  int members = 0;
  for (const auto& r : *records) members += r.label;
  EXPECT_EQ(members, 500);
}

TEST(AssembleTest, BalancingKeepsSmallerSideWhole) {
  Rng rng(4);
  const Dataset train = MakeSet("t", 300, rng), test = MakeSet("s", 200, rng);
  testing::IdentityOracle shadow;
  auto records = AssembleAttackDataset(shadow, train, test, AttackType::kTypeI, true, 5);
  ASSERT_TRUE(records.ok());
  ASSERT_EQ(records->size(), 400u);
  std::set<std::string> nonmember_ids;
  for (const auto& r : *records) {
    if (r.label == 0) nonmember_ids.insert(r.id);
  }
  EXPECT_EQ(nonmember_ids.size(), 200u);

  // Mirror case: more non-members than members.
  auto mirrored = AssembleAttackDataset(shadow, test, train, AttackType::kTypeI, true, 5);
  ASSERT_TRUE(mirrored.ok());
  std::set<std::string> member_ids;
  for (const auto& r : *mirrored) {
    if (r.label == 1) member_ids.insert(r.id);
  }
  EXPECT_EQ(member_ids.size(), 200u);
  EXPECT_EQ(mirrored->size(), 400u);
}

TEST(AssembleTest, UnbalancedKeepsEverything) {
  Rng rng(5);
  const Dataset train = MakeSet("t", 30, rng), test = MakeSet("s", 20, rng);
  testing::IdentityOracle shadow;
  auto records = AssembleAttackDataset(shadow, train, test, AttackType::kTypeI, false, 5);
  ASSERT_TRUE(records.ok());
  EXPECT_EQ(records->size(), 50u);
}

TEST(AssembleTest, EmptySetIsAnError) {
  Rng rng(6);
  const Dataset train = MakeSet("t", 3, rng);
  testing::IdentityOracle shadow;
  EXPECT_FALSE(AssembleAttackDataset(shadow, train, {}, AttackType::kTypeI, true, 1).ok());
  EXPECT_FALSE(AssembleAttackDataset(shadow, {}, train, AttackType::kTypeI, true, 1).ok());
}

TEST(LossThresholdTest, ArithmeticMean) {
  testing::PixelLossOracle shadow;
  EXPECT_NEAR(CalibrateLossThreshold(shadow, LossSet("a", {0.2, 0.4}))->tau, 0.3, 1e-7);
  EXPECT_NEAR(CalibrateLossThreshold(shadow, LossSet("a", {0.7, 0.7, 0.7}))->tau, 0.7, 1e-7);
  EXPECT_FALSE(CalibrateLossThreshold(shadow, {}).ok());
}

TEST(LossThresholdTest, MatchesSummationOracle) {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<double> losses(100);
  for (double& l : losses) l = u(rng);
  const Dataset set = LossSet("r", losses);
  // The oracle reads back the float-rounded values actually stored.
  double sum = 0.0;
  for (const auto& p : set) sum += p.image.at(0, 0, 0);
  testing::PixelLossOracle shadow;
  EXPECT_NEAR(CalibrateLossThreshold(shadow, set)->tau, sum / 100.0, 1e-9);
}

TEST(LossRuleTest, LessThanOrEqualIsMember) {
  EXPECT_EQ(InferMembershipFromLoss(0.3, {0.3}), 1);
  EXPECT_EQ(InferMembershipFromLoss(0.31, {0.3}), 0);
  EXPECT_EQ(InferMembershipFromLoss(0.0, {0.0}), 1);
  EXPECT_EQ(InferMembershipFromLoss(0.0, {2.5}), 1);
}

TEST(LossRuleTest, InvariantUnderIncreasingTransform) {
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  auto f = [](double x) { return 3.0 * std::exp(x) + 1.0; };
  for (int i = 0; i < 1000; ++i) {
    const double loss = u(rng), tau = u(rng);
    EXPECT_EQ(InferMembershipFromLoss(loss, {tau}),
              InferMembershipFromLoss(f(loss), {f(tau)}));
  }
}

TEST(RunAttackTest, PerfectLossAttack) {
  testing::PixelLossOracle victim;
  auto r = RunAttack(victim, LossThreshold{0.5}, LossSet("m", {0.1, 0.2, 0.3}),
                     LossSet("n", {0.8, 0.9, 1.0}), AttackType::kGlobalLoss);
  ASSERT_TRUE(r.ok());
  EXPECT_DOUBLE_EQ(r->report.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r->report.f1, 1.0);
  EXPECT_DOUBLE_EQ(r->report.auc, 1.0);
  EXPECT_DOUBLE_EQ(r->samples[0].roc_score, -0.1f);
  EXPECT_EQ(r->samples[0].score, 1.0);
}

TEST(RunAttackTest, ConstantHalfScoreIsChance) {
  AttackClassifierConfig cfg{2, 4, 4, 8};
  auto clf = AttackClassifier::Create(cfg, 1);
  ASSERT_TRUE(clf.ok());
  for (auto* p : clf->parameters()) std::fill(p->value.begin(), p->value.end(), 0.0f);
  Rng rng(10);
  testing::IdentityOracle victim;
  auto r = RunAttack(victim, &*clf, MakeSet("m", 10, rng), MakeSet("n", 10, rng),
                     AttackType::kTypeII);
  ASSERT_TRUE(r.ok());
  for (const auto& s : r->samples) {
    EXPECT_DOUBLE_EQ(s.score, 0.5);
    EXPECT_EQ(s.decision, 1);  // ties go to "member"
  }
  EXPECT_DOUBLE_EQ(r->report.accuracy, 0.5);
}

TEST(RunAttackTest, Errors) {
  Rng rng(11);
  testing::IdentityOracle victim;
  const Dataset m = MakeSet("m", 3, rng), n = MakeSet("n", 3, rng);
  auto clf = AttackClassifier::Create({2, 8, 8, 8}, 1);
  ASSERT_TRUE(clf.ok());
  auto shape = RunAttack(victim, &*clf, m, n, AttackType::kTypeII);
  EXPECT_THAT(shape.status().message(), HasSubstr("shape mismatch"));
  EXPECT_FALSE(RunAttack(victim, LossThreshold{1}, m, n, AttackType::kTypeI).ok());
  EXPECT_FALSE(RunAttack(victim, &*clf, m, n, AttackType::kGlobalLoss).ok());
  EXPECT_FALSE(RunAttack(victim, LossThreshold{1}, m, {}, AttackType::kGlobalLoss).ok());
}

TEST(PersistenceTest, AttackDatasetRoundTrip) {
  Rng rng(12);
  testing::IdentityOracle shadow;
  auto records = AssembleAttackDataset(shadow, MakeSet("t", 4, rng), MakeSet("s", 4, rng),
                                       AttackType::kTypeII, true, 3);
  ASSERT_TRUE(records.ok());
  const auto dir = std::filesystem::path(::testing::TempDir()) / "attack_ds";
  std::filesystem::remove_all(dir);
  ASSERT_TRUE(WriteAttackDataset(dir, *records).ok());
  auto back = ReadAttackDataset(dir);
  ASSERT_TRUE(back.ok());
  ASSERT_EQ(back->size(), records->size());
  for (size_t i = 0; i < back->size(); ++i) {
    EXPECT_EQ((*back)[i].id, (*records)[i].id);
    EXPECT_EQ((*back)[i].label, (*records)[i].label);
    EXPECT_EQ((*back)[i].input, (*records)[i].input);
  }
  EXPECT_FALSE(ReadAttackDataset(dir / "missing").ok());
}

TEST(PersistenceTest, ScoresCsvColumns) {
  AttackResult r;
  r.samples.push_back({"a", 0.25, 0.25, 0, 1});
  EXPECT_EQ(ScoresCsv(r), "id,score,label\na,0.25,1\n");
}

}  // namespace
}  // namespace segpriv
