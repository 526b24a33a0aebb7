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

#include "segpriv/data.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace segpriv {
namespace {

Dataset Numbered(int n) {
  Rng rng(1);
  Dataset d;
  for (int i = 0; i < n; ++i) d.push_back(testing::RandomPair("s" + std::to_string(i), 4, 4, rng));
  return d;
}

TEST(ValidatePairTest, RejectsBadPairs) {
  Rng rng(1);
  ImageMaskPair p = testing::RandomPair("a", 4, 4, rng);
  EXPECT_TRUE(ValidatePair(p, 2).ok());
  p.mask.at(0, 0) = 2;
  EXPECT_FALSE(ValidatePair(p, 2).ok());
  p.mask.at(0, 0) = 0;
  p.image.at(0, 1, 1) = 1.5f;
  EXPECT_FALSE(ValidatePair(p, 2).ok());
  p.image = Tensor(1, 4, 5);
  EXPECT_FALSE(ValidatePair(p, 2).ok());
}

TEST(SplitsTest, SizesAndDisjointness) {
  const Dataset d = Numbered(50);
  auto s = MakeSplits(d, {10, 9, 8, 7, 6}, 3);
  ASSERT_TRUE(s.ok());
  EXPECT_EQ(s->victim_train.size(), 10u);
  EXPECT_EQ(s->victim_test.size(), 9u);
  EXPECT_EQ(s->shadow_train.size(), 8u);
  EXPECT_EQ(s->shadow_test.size(), 7u);
  EXPECT_EQ(s->reference.size(), 6u);
  EXPECT_TRUE(CheckSplitsDisjoint(*s).ok());
  std::set<std::string> ids;
  for (const Dataset* part : {&s->victim_train, &s->victim_test, &s->shadow_train,
                              &s->shadow_test, &s->reference}) {
    for (const auto& p : *part) ids.insert(p.id);
  }
  EXPECT_EQ(ids.size(), 40u);
}

TEST(SplitsTest, DeterministicInSeed) {
  const Dataset d = Numbered(30);
  auto a = MakeSplits(d, {5, 5, 5, 5, 0}, 9);
  auto b = MakeSplits(d, {5, 5, 5, 5, 0}, 9);
  auto c = MakeSplits(d, {5, 5, 5, 5, 0}, 10);
  ASSERT_TRUE(a.ok() && b.ok() && c.ok());
  EXPECT_EQ(SplitManifest(*a, 9)["victim_train"], SplitManifest(*b, 9)["victim_train"]);
  EXPECT_NE(SplitManifest(*a, 9)["victim_train"], SplitManifest(*c, 9)["victim_train"]);
}

TEST(SplitsTest, InsufficientDataIsOutOfRange) {
  auto s = MakeSplits(Numbered(10), {5, 5, 1, 0, 0}, 1);
  EXPECT_EQ(s.status().code(), absl::StatusCode::kOutOfRange);
}

TEST(SplitsTest, DuplicateIdsRejected) {
  Dataset d = Numbered(4);
  d[3].id = d[0].id;
  EXPECT_FALSE(MakeSplits(d, {1, 1, 0, 0, 0}, 1).ok());
}

TEST(SplitsTest, OverlapDetected) {
  DatasetSplits s;
  const Dataset d = Numbered(3);
  s.victim_train = {d[0], d[1]};
  s.shadow_test = {d[1]};
  EXPECT_EQ(CheckSplitsDisjoint(s).code(), absl::StatusCode::kFailedPrecondition);
}

TEST(ResizeTest, SameSizeIsIdentity) {
  Rng rng(2);
  const ImageMaskPair p = testing::RandomPair("a", 6, 6, rng);
  const ImageMaskPair r = ResizePair(p, 6, 6);
  EXPECT_EQ(r.image, p.image);
  EXPECT_EQ(r.mask, p.mask);
}

TEST(ResizeTest, BilinearImageNearestMask) {
  // 2x2 -> 4x4 with half-pixel centres: source coordinate (y + 0.5) / 2 - 0.5,
  // clamped to [0, 1].
  ImageMaskPair p{"a", Tensor(1, 2, 2), LabelMask(2, 2)};
  p.image.at(0, 0, 0) = 0.0f;
  p.image.at(0, 0, 1) = 1.0f;
  p.image.at(0, 1, 0) = 0.0f;
  p.image.at(0, 1, 1) = 1.0f;
  p.mask.at(0, 1) = 1;
  p.mask.at(1, 1) = 1;
  const ImageMaskPair r = ResizePair(p, 4, 4);
  const float row[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      EXPECT_NEAR(r.image.at(0, y, x), row[x], 1e-7);
      EXPECT_EQ(r.mask.at(y, x), x >= 2 ? 1 : 0);
    }
  }
}

TEST(ResizeTest, DownsampleAverages) {
  // 4 -> 2: source coordinate 2x + 0.5, i.e. halfway between two columns.
  ImageMaskPair p{"a", Tensor(1, 1, 4), LabelMask(1, 4)};
  for (int x = 0; x < 4; ++x) p.image.at(0, 0, x) = 0.1f * x;
  const ImageMaskPair r = ResizePair(p, 1, 2);
  EXPECT_NEAR(r.image.at(0, 0, 0), 0.05, 1e-7);
  EXPECT_NEAR(r.image.at(0, 0, 1), 0.25, 1e-7);
}

TEST(SyntheticTest, ValidAndDeterministic) {
  SyntheticTaskSpec spec;
  spec.seed = 4;
  auto a = GenerateSyntheticDataset(spec, 20);
  auto b = GenerateSyntheticDataset(spec, 20);
  ASSERT_TRUE(a.ok() && b.ok());
  for (size_t i = 0; i < a->size(); ++i) {
    EXPECT_TRUE(ValidatePair((*a)[i], 2).ok());
    EXPECT_EQ((*a)[i].image, (*b)[i].image);
    EXPECT_EQ((*a)[i].mask, (*b)[i].mask);
  }
}

TEST(SyntheticTest, PrefixProperty) {
  SyntheticTaskSpec spec;
  spec.seed = 5;
  auto small = GenerateSyntheticDataset(spec, 5);
  auto large = GenerateSyntheticDataset(spec, 12);
  ASSERT_TRUE(small.ok() && large.ok());
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ((*small)[i].id, (*large)[i].id);
    EXPECT_EQ((*small)[i].image, (*large)[i].image);
    EXPECT_EQ((*small)[i].mask, (*large)[i].mask);
  }
}

TEST(SyntheticTest, HasForegroundAndBackground) {
  SyntheticTaskSpec spec;
  spec.seed = 6;
  auto d = GenerateSyntheticDataset(spec, 20);
  ASSERT_TRUE(d.ok());
  for (const auto& p : *d) {
    int fg = 0;
    for (uint8_t v : p.mask.labels()) fg += v;
    EXPECT_GT(fg, 0) << p.id;
    EXPECT_LT(fg, static_cast<int>(p.mask.size())) << p.id;
  }
}

TEST(SyntheticTest, MultiClassAndColour) {
  SyntheticTaskSpec spec;
  spec.num_classes = 4;
  spec.channels = 3;
  spec.seed = 7;
  auto d = GenerateSyntheticDataset(spec, 10);
  ASSERT_TRUE(d.ok());
  for (const auto& p : *d) {
    EXPECT_EQ(p.image.channels(), 3);
    EXPECT_TRUE(ValidatePair(p, 4).ok());
  }
}

TEST(SyntheticTest, RejectsBadSpecs) {
  SyntheticTaskSpec spec;
  spec.height = 16;
  EXPECT_FALSE(ValidateSyntheticSpec(spec).ok());
  spec = {};
  spec.channels = 2;
  EXPECT_FALSE(ValidateSyntheticSpec(spec).ok());
  spec = {};
  spec.min_shapes = 4;
  EXPECT_FALSE(ValidateSyntheticSpec(spec).ok());
  spec = {};
  spec.distractors = -1;
  EXPECT_FALSE(ValidateSyntheticSpec(spec).ok());
  EXPECT_FALSE(GenerateSyntheticDataset(SyntheticTaskSpec{}, 0).ok());
}

TEST(PngTest, DirectoryRoundTrip) {
  const auto root = std::filesystem::path(::testing::TempDir()) / "png_ds";
  std::filesystem::remove_all(root);
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  Rng rng(8);
  Dataset written;
  for (int i = 0; i < 3; ++i) {
    ImageMaskPair p = testing::RandomPair("img" + std::to_string(i), 5, 7, rng, 3);
    // Quantise to the 8-bit grid so the round trip is exact.
    for (float& v : p.image.values()) v = std::round(v * 255.0f) / 255.0f;
    p.mask.at(0, 0) = 2;
    ASSERT_TRUE(WritePngImage(root / "images" / (p.id + ".png"), p.image).ok());
    ASSERT_TRUE(WritePngMask(root / "masks" / (p.id + ".png"), p.mask).ok());
    written.push_back(std::move(p));
  }
  auto loaded = LoadDirectoryDataset(root, 3);
  ASSERT_TRUE(loaded.ok()) << loaded.status();
  ASSERT_EQ(loaded->size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ((*loaded)[i].id, written[i].id);
    EXPECT_EQ((*loaded)[i].mask, written[i].mask);
    for (size_t k = 0; k < written[i].image.size(); ++k) {
      EXPECT_NEAR((*loaded)[i].image.values()[k], written[i].image.values()[k], 1e-6);
    }
  }
  // Labels beyond num_classes fail validation.
  EXPECT_FALSE(LoadDirectoryDataset(root, 2).ok());
  EXPECT_EQ(LoadDirectoryDataset(root / "nope", 2).status().code(),
            absl::StatusCode::kNotFound);
}

}  // namespace
}  // namespace segpriv
