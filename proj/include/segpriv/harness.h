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

// Config-driven experiment runs: split, (defended, optionally poisoned)
// victim training, shadow training, attacks, evaluation and persistence.

#ifndef SEGPRIV_HARNESS_H_
#define SEGPRIV_HARNESS_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "nlohmann/json.hpp"
#include "segpriv/attacks.h"
#include "segpriv/data.h"
#include "segpriv/defences.h"
#include "segpriv/dp.h"
#include "segpriv/kv_config.h"
#include "segpriv/models.h"
#include "segpriv/poisoning.h"

namespace segpriv {

enum class DefenceKind { kNone, kArgmax, kCrop, kMixup, kMinMax, kDp, kKd };

std::string_view DefenceName(DefenceKind kind);
absl::StatusOr<DefenceKind> ParseDefence(std::string_view name);

struct DefenceSpec {
  DefenceKind kind = DefenceKind::kNone;
  int crop_height = 16;
  int crop_width = 16;
  int crop_epochs = 0;  // 0: three times the victim's epochs
  MixupConfig mixup;
  MinMaxConfig minmax;
  DPConfig dp;
};

struct ExperimentConfig {
  std::string dataset_kind = "synthetic";  // or "directory"
  std::filesystem::path dataset_path;
  SyntheticTaskSpec synthetic;
  SplitSizes splits{200, 200, 200, 200, 0};
  SegModelConfig model;
  TrainConfig train;         // victim and shadow; hooks are ignored
  TrainConfig attack_train;  // attack classifiers
  ShadowSetting shadow;
  // When set, the shadow model is loaded instead of trained.
  std::filesystem::path shadow_checkpoint;
  std::vector<AttackType> attacks = {AttackType::kGlobalLoss, AttackType::kTypeI,
                                     AttackType::kTypeII};
  DefenceSpec defence;
  std::optional<TriggerSpec> trigger;
  bool save_attack_datasets = true;
  uint64_t seed = 0;
};

// Desk-scale defaults: 60 epochs, batch 8, lr 1e-3 for segmentation models;
// 30 epochs, batch 4, lr 1e-3 for attack classifiers.
ExperimentConfig DefaultExperimentConfig();

// kInvalidArgument on malformed values, unknown names or unrecognised keys.
// Keys under `sweep.` are reserved for the CLI and ignored here.
absl::StatusOr<ExperimentConfig> ExperimentConfigFromKv(const KeyValueConfig& kv);

// Inverse of ExperimentConfigFromKv for every field it reads.
KeyValueConfig ToKv(const ExperimentConfig& config);

struct HygieneReport {
  int checks = 0;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

nlohmann::json ToJson(const HygieneReport& report);

struct RunResult {
  std::filesystem::path dir;
  std::map<AttackType, AttackResult> attacks;
  double train_dice = 0.0;
  double test_dice = 0.0;
  double gap = 0.0;
  std::optional<BackdoorReport> backdoor;
  HygieneReport hygiene;
  nlohmann::json manifest;
};

// Runs one experiment into `out_dir` (created if needed; must not already
// hold a completed run). manifest.json is written first with status
// "running" and rewritten as "complete", "hygiene_failed" or "failed".
// Hygiene violations are reported in the result, not as an error.
absl::StatusOr<RunResult> RunExperiment(const ExperimentConfig& config,
                                        const std::filesystem::path& out_dir);

struct SweepRow {
  std::string value;
  bool ok = false;
  std::string error;
  std::optional<RunResult> result;
};

// One run per value of `axis` under out_dir/<index>_<value>/. The axis may
// name several keys joined by '+', which all receive the value. Per-run
// failures are recorded in the table and the sweep continues. Writes
// out_dir/sweep.csv.
absl::StatusOr<std::vector<SweepRow>> Sweep(const KeyValueConfig& base,
                                            const std::string& axis,
                                            const std::vector<std::string>& values,
                                            const std::filesystem::path& out_dir);

std::string SweepCsv(const std::string& axis, const std::vector<SweepRow>& rows);

// Writes plot-ready data under <dir>/plots. For a run directory: linear and
// log-log ROC curves per attack. For a sweep directory: gap-vs-accuracy and
// utility-vs-value bar tables. kNotFound when neither artefact exists.
absl::Status EmitPlots(const std::filesystem::path& dir);

}  // namespace segpriv

#endif  // SEGPRIV_HARNESS_H_
