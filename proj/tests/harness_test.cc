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

#include "segpriv/harness.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gmock/gmock.h"
#include "gtest/gtest.h"

namespace segpriv {
namespace {

namespace fs = std::filesystem;
using ::testing::HasSubstr;

constexpr char kTinyConfig[] = R"(
seed = 3
splits.victim_train = 8
splits.victim_test = 8
splits.shadow_train = 8
splits.shadow_test = 8
splits.reference = 0
model.base_width = 4
train.epochs = 2
train.batch_size = 4
train.learning_rate = 0.001
attack.epochs = 1
attack.batch_size = 4
attack.learning_rate = 0.001
)";

KeyValueConfig TinyKv() { return *KeyValueConfig::Parse(kTinyConfig); }

fs::path FreshDir(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / "harness_test" / name;
  fs::remove_all(dir);
  return dir;
}

std::string Slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json ReadJson(const fs::path& path) { return nlohmann::json::parse(Slurp(path)); }

TEST(DefenceNameTest, RoundTrip) {
  for (auto k : {DefenceKind::kNone, DefenceKind::kArgmax, DefenceKind::kCrop,
                 DefenceKind::kMixup, DefenceKind::kMinMax, DefenceKind::kDp,
                 DefenceKind::kKd}) {
    EXPECT_EQ(*ParseDefence(DefenceName(k)), k);
  }
  EXPECT_FALSE(ParseDefence("prayer").ok());
}

TEST(ConfigTest, KvRoundTrip) {
  KeyValueConfig kv = TinyKv();
  kv.Set("defence", "mixup");
  kv.Set("defence.mixup.n", "3");
  kv.Set("trigger.shape", "square");
  kv.Set("trigger.poison_prob", "0.05");
  kv.Set("shadow.mode", "model-agnostic");
  kv.Set("shadow.encoder", "vgg-lite");
  kv.Set("attacks", "type2, global_loss");
  auto cfg = ExperimentConfigFromKv(kv);
  ASSERT_TRUE(cfg.ok()) << cfg.status();
  EXPECT_EQ(cfg->defence.kind, DefenceKind::kMixup);
  EXPECT_EQ(cfg->defence.mixup.n, 3);
  ASSERT_TRUE(cfg->trigger.has_value());
  EXPECT_EQ(cfg->trigger->shape, TriggerShape::kSquare);
  EXPECT_EQ(cfg->attacks.size(), 2u);
  EXPECT_EQ(cfg->synthetic.seed, 3u);

  auto again = ExperimentConfigFromKv(ToKv(*cfg));
  ASSERT_TRUE(again.ok()) << again.status();
  EXPECT_EQ(ToKv(*again).values(), ToKv(*cfg).values());
}

TEST(ConfigTest, DefaultsRoundTrip) {
  const ExperimentConfig d = DefaultExperimentConfig();
  EXPECT_EQ(d.train.epochs, 60);
  EXPECT_EQ(d.attack_train.batch_size, 4);
  auto back = ExperimentConfigFromKv(ToKv(d));
  ASSERT_TRUE(back.ok()) << back.status();
  EXPECT_EQ(ToKv(*back).values(), ToKv(d).values());
}

TEST(ConfigTest, RejectsUnknownKeysAndBadValues) {
  KeyValueConfig kv = TinyKv();
  kv.Set("train.epochz", "3");
  EXPECT_THAT(ExperimentConfigFromKv(kv).status().message(), HasSubstr("train.epochz"));

  kv = TinyKv();
  kv.Set("sweep.axis", "defence");  // reserved for the CLI
  EXPECT_TRUE(ExperimentConfigFromKv(kv).ok());

  kv = TinyKv();
  kv.Set("defence", "kd");  // needs a reference split
  EXPECT_FALSE(ExperimentConfigFromKv(kv).ok());

  kv = TinyKv();
  kv.Set("defence", "crop");
  kv.Set("defence.crop.height", "18");
  EXPECT_FALSE(ExperimentConfigFromKv(kv).ok());

  kv = TinyKv();
  kv.Set("attacks", "type9");
  EXPECT_FALSE(ExperimentConfigFromKv(kv).ok());
}

TEST(RunTest, TinyRunIsCompleteAndDeterministic) {
  auto cfg = ExperimentConfigFromKv(TinyKv());
  ASSERT_TRUE(cfg.ok());
  const fs::path a = FreshDir("det_a"), b = FreshDir("det_b");
  auto ra = RunExperiment(*cfg, a);
  ASSERT_TRUE(ra.ok()) << ra.status();
  auto rb = RunExperiment(*cfg, b);
  ASSERT_TRUE(rb.ok()) << rb.status();

  EXPECT_TRUE(ra->hygiene.ok());
  EXPECT_GT(ra->hygiene.checks, 0);
  EXPECT_EQ(ra->attacks.size(), 3u);
  EXPECT_EQ(ReadJson(a / "manifest.json")["status"], "complete");
  for (const char* f : {"splits.json", "config.txt", "victim.ckpt", "shadow.ckpt",
                        "report.json", "scores_type1.csv", "scores_type2.csv",
                        "scores_global_loss.csv", "roc_type2.csv", "attack_type2.ckpt"}) {
    EXPECT_TRUE(fs::exists(a / f)) << f;
    if (std::string(f).ends_with(".csv") || std::string(f).ends_with("report.json") ||
        std::string(f) == "splits.json") {
      EXPECT_EQ(Slurp(a / f), Slurp(b / f)) << f;
    }
  }
  EXPECT_TRUE(fs::exists(a / "attack_data_type1" / "manifest.json"));

  // Completed runs are not overwritten.
  EXPECT_EQ(RunExperiment(*cfg, a).status().code(), absl::StatusCode::kAlreadyExists);

  // Plots from a run directory.
  ASSERT_TRUE(EmitPlots(a).ok());
  EXPECT_TRUE(fs::exists(a / "plots" / "roc_type2_loglog.csv"));
  EXPECT_TRUE(fs::exists(a / "plots" / "plots.json"));
}

TEST(RunTest, FailedRunLeavesManifest) {
  KeyValueConfig kv = TinyKv();
  kv.Set("dataset.kind", "directory");
  kv.Set("dataset.path", "/nonexistent/dataset");
  auto cfg = ExperimentConfigFromKv(kv);
  ASSERT_TRUE(cfg.ok());
  const fs::path dir = FreshDir("failed");
  EXPECT_FALSE(RunExperiment(*cfg, dir).ok());
  const auto manifest = ReadJson(dir / "manifest.json");
  EXPECT_EQ(manifest["status"], "failed");
  EXPECT_EQ(manifest["partial_outputs"], true);
}

TEST(RunTest, InsufficientDataIsAnError) {
  KeyValueConfig kv = TinyKv();
  kv.Set("dataset.kind", "directory");
  const fs::path data = FreshDir("small_data");
  fs::create_directories(data / "images");
  fs::create_directories(data / "masks");
  Tensor img(1, 32, 32);
  LabelMask mask(32, 32);
  for (int i = 0; i < 3; ++i) {
    ASSERT_TRUE(WritePngImage(data / "images" / (std::to_string(i) + ".png"), img).ok());
    ASSERT_TRUE(WritePngMask(data / "masks" / (std::to_string(i) + ".png"), mask).ok());
  }
  kv.Set("dataset.path", data.string());
  auto cfg = ExperimentConfigFromKv(kv);
  ASSERT_TRUE(cfg.ok());
  EXPECT_EQ(RunExperiment(*cfg, FreshDir("small_run")).status().code(),
            absl::StatusCode::kOutOfRange);
}

TEST(RunTest, ShadowCheckpointFromOtherSplitsIsAViolation) {
  KeyValueConfig kv = TinyKv();
  kv.Set("attacks", "global_loss");
  auto base = ExperimentConfigFromKv(kv);
  ASSERT_TRUE(base.ok());
  const fs::path source = FreshDir("shadow_source");
  ASSERT_TRUE(RunExperiment(*base, source).ok());

  // Same seed: same splits, the checkpoint is accepted.
  ExperimentConfig reuse = *base;
  reuse.shadow_checkpoint = source / "shadow.ckpt";
  auto ok_run = RunExperiment(reuse, FreshDir("shadow_reuse"));
  ASSERT_TRUE(ok_run.ok()) << ok_run.status();
  EXPECT_TRUE(ok_run->hygiene.ok());

  // Different seed: different shadow subsets.
  reuse.seed = 4;
  const fs::path bad_dir = FreshDir("shadow_mismatch");
  auto bad = RunExperiment(reuse, bad_dir);
  ASSERT_TRUE(bad.ok()) << bad.status();
  EXPECT_FALSE(bad->hygiene.ok());
  EXPECT_EQ(ReadJson(bad_dir / "manifest.json")["status"], "hygiene_failed");
}

TEST(RunTest, DefendedAndPoisonedRunsRecordParameters) {
  KeyValueConfig kv = TinyKv();
  kv.Set("attacks", "type1");
  kv.Set("defence", "dp");
  kv.Set("trigger.shape", "line");
  kv.Set("trigger.poison_prob", "0.5");
  auto cfg = ExperimentConfigFromKv(kv);
  ASSERT_TRUE(cfg.ok()) << cfg.status();
  const fs::path dir = FreshDir("dp_poison");
  auto r = RunExperiment(*cfg, dir);
  ASSERT_TRUE(r.ok()) << r.status();
  EXPECT_TRUE(r->backdoor.has_value());
  const auto manifest = ReadJson(dir / "manifest.json");
  EXPECT_EQ(manifest["defence"]["name"], "dp");
  EXPECT_GT(manifest["defence"]["params"]["noise_multiplier"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(dir / "poisoning.json"));
}

TEST(SweepTest, FailingValueIsRecordedAndSweepContinues) {
  const fs::path dir = FreshDir("sweep");
  KeyValueConfig kv = TinyKv();
  kv.Set("attacks", "global_loss");
  auto rows = Sweep(kv, "train.epochs", {"1", "0", "2"}, dir);
  ASSERT_TRUE(rows.ok()) << rows.status();
  ASSERT_EQ(rows->size(), 3u);
  EXPECT_TRUE((*rows)[0].ok);
  EXPECT_FALSE((*rows)[1].ok);
  EXPECT_FALSE((*rows)[1].error.empty());
  EXPECT_TRUE((*rows)[2].ok);
  const std::string csv = Slurp(dir / "sweep.csv");
  EXPECT_THAT(csv, HasSubstr("train.epochs,status,error"));
  EXPECT_TRUE(fs::exists(dir / "02_2" / "report.json"));

  ASSERT_TRUE(EmitPlots(dir).ok());
  EXPECT_TRUE(fs::exists(dir / "plots" / "gap_vs_accuracy.csv"));
  EXPECT_TRUE(fs::exists(dir / "plots" / "utility_bars.csv"));
}

TEST(SweepTest, JointAxisSetsEveryKey) {
  const fs::path dir = FreshDir("joint");
  KeyValueConfig kv = TinyKv();
  kv.Set("attacks", "none");
  auto rows = Sweep(kv, "splits.victim_train+splits.shadow_train", {"6"}, dir);
  ASSERT_TRUE(rows.ok());
  ASSERT_TRUE((*rows)[0].ok) << (*rows)[0].error;
  const auto splits = ReadJson(dir / "00_6" / "splits.json");
  EXPECT_EQ(splits["victim_train"].size(), 6u);
  EXPECT_EQ(splits["shadow_train"].size(), 6u);
}

TEST(PlotsTest, MissingArtefactsIsNotFound) {
  const fs::path dir = FreshDir("empty");
  fs::create_directories(dir);
  EXPECT_EQ(EmitPlots(dir).code(), absl::StatusCode::kNotFound);
}

}  // namespace
}  // namespace segpriv
