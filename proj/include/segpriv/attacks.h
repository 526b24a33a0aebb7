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

// Membership inference against segmentation models.
//
// Type-I: a classifier sees only the victim's probability mask.
// Type-II: a classifier sees the probability mask followed by the
//   ground-truth mask, concatenated channel-wise.
// Global loss: member iff the victim's loss on the sample is at most the
//   mean training loss of a shadow model.
//
// Every entry point takes the victim as a SegmentationOracle, so attacks only
// ever observe model outputs.

#ifndef SEGPRIV_ATTACKS_H_
#define SEGPRIV_ATTACKS_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "segpriv/attack_record.h"
#include "segpriv/data.h"
#include "segpriv/metrics.h"
#include "segpriv/models.h"

namespace segpriv {

enum class AttackType { kTypeI, kTypeII, kGlobalLoss };

std::string_view AttackTypeName(AttackType type);
// Accepts "type1", "type2" and "global_loss".
absl::StatusOr<AttackType> ParseAttackType(std::string_view name);

enum class ShadowMode { kModelDependent, kModelAgnostic };

struct ShadowSetting {
  ShadowMode mode = ShadowMode::kModelDependent;
  std::string shadow_encoder_id;  // ignored in model-dependent mode
};

// Encoder the shadow model should use for a given victim encoder.
absl::StatusOr<std::string> ResolveShadowEncoder(const ShadowSetting& setting,
                                                 const std::string& victim_encoder);

// Ground truth as attack-input channels: one 0/1 channel for binary tasks,
// one-hot over K channels otherwise.
Tensor EncodeGroundTruth(const LabelMask& mask, int num_classes);

AttackRecord BuildType1Record(std::string id, const Tensor& prediction,
                              int label);

absl::StatusOr<AttackRecord> BuildType2Record(std::string id,
                                              const Tensor& prediction,
                                              const LabelMask& ground_truth,
                                              int num_classes, int label);

// Draws min(|members|, |non-members|) samples from each side. The smaller
// side is always kept whole.
struct BalancedSets {
  Dataset members;
  Dataset nonmembers;
};
BalancedSets Balance(std::span<const ImageMaskPair> members,
                     std::span<const ImageMaskPair> nonmembers, uint64_t seed);

// Records labelled 1 for shadow_train and 0 for shadow_test, queried
// through the shadow model.
absl::StatusOr<std::vector<AttackRecord>> AssembleAttackDataset(
    const SegmentationOracle& shadow, std::span<const ImageMaskPair> shadow_train,
    std::span<const ImageMaskPair> shadow_test, AttackType type, bool balance,
    uint64_t seed);

struct LossThreshold {
  double tau = 0.0;
};

// tau = mean of the shadow model's per-sample losses over its training set.
absl::StatusOr<LossThreshold> CalibrateLossThreshold(
    const SegmentationOracle& shadow, std::span<const ImageMaskPair> shadow_train);

// 1 (member) iff loss <= tau.
inline int InferMembershipFromLoss(double loss, const LossThreshold& threshold) {
  return loss <= threshold.tau ? 1 : 0;
}

struct ScoredSample {
  std::string id;
  // Classifier attacks: membership probability. Loss attack: the 0/1 rule.
  double score = 0.0;
  // Continuous score used for ROC analysis (-loss for the loss attack).
  double roc_score = 0.0;
  int decision = 0;
  int label = 0;
};

struct AttackResult {
  AttackType type = AttackType::kGlobalLoss;
  std::vector<ScoredSample> samples;
  MetricsReport report;
};

using AttackModel = std::variant<const AttackClassifier*, LossThreshold>;

// Classifier attacks decide "member" when the probability is >= 0.5.
absl::StatusOr<AttackResult> RunAttack(const SegmentationOracle& victim,
                                       const AttackModel& attack_model,
                                       std::span<const ImageMaskPair> members,
                                       std::span<const ImageMaskPair> nonmembers,
                                       AttackType type);

// CSV with columns id,score,label.
std::string ScoresCsv(const AttackResult& result);

// Persists records as <dir>/<index>.tensor plus <dir>/manifest.json with
// id, label, source subset and file name per record.
absl::Status WriteAttackDataset(const std::filesystem::path& dir,
                                std::span<const AttackRecord> records);
absl::StatusOr<std::vector<AttackRecord>> ReadAttackDataset(
    const std::filesystem::path& dir);

absl::Status WriteTensor(const std::filesystem::path& path, const Tensor& t);
absl::StatusOr<Tensor> ReadTensor(const std::filesystem::path& path);

}  // namespace segpriv

#endif  // SEGPRIV_ATTACKS_H_
