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

// Backdoor poisoning: trigger stamping, a probabilistic poisoned loader and
// backdoor-success evaluation.

#ifndef SEGPRIV_POISONING_H_
#define SEGPRIV_POISONING_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "nlohmann/json.hpp"
#include "segpriv/data.h"
#include "segpriv/models.h"
#include "segpriv/random.h"

namespace segpriv {

enum class TriggerShape { kLine, kSquare };

std::string_view TriggerShapeName(TriggerShape shape);
absl::StatusOr<TriggerShape> ParseTriggerShape(std::string_view name);

struct TriggerSpec {
  TriggerShape shape = TriggerShape::kLine;
  int value_8bit = 255;
  double poison_prob = 0.0;
};

absl::Status ValidateTriggerSpec(const TriggerSpec& spec);
nlohmann::json ToJson(const TriggerSpec& spec);

// Line: row 0, every column. Square: rows 0-2 x columns 0-2. Trigger pixels
// take value_8bit / 255 on every channel and the mask becomes all
// background. kInvalidArgument when the image cannot hold the trigger.
absl::StatusOr<ImageMaskPair> StampTrigger(const ImageMaskPair& pair,
                                           const TriggerSpec& spec);

// Yields seeded shuffled batches; every emitted sample is independently
// stamped with probability poison_prob, re-drawn each epoch. Order and
// poisoning use separate streams, so poison_prob = 0 reproduces the clean
// order exactly.
class PoisonedLoader {
 public:
  static absl::StatusOr<PoisonedLoader> Create(Dataset dataset,
                                               const TriggerSpec& spec,
                                               int batch_size, uint64_t seed);

  std::vector<std::vector<ImageMaskPair>> NextEpoch();

  const std::vector<int>& poison_counts() const { return poison_counts_; }
  nlohmann::json Manifest() const;

 private:
  PoisonedLoader(Dataset dataset, TriggerSpec spec, int batch_size,
                 uint64_t seed);

  Dataset dataset_;
  TriggerSpec spec_;
  int batch_size_;
  uint64_t seed_;
  Rng order_rng_;
  Rng poison_rng_;
  std::vector<int> poison_counts_;
};

// Training-loop form of the poisoned loader: stamps batch samples in place.
class PoisoningHook : public TrainingHook {
 public:
  PoisoningHook(const TriggerSpec& spec, uint64_t seed)
      : spec_(spec), seed_(seed), rng_(seed) {}

  std::string name() const override { return "poisoning"; }
  nlohmann::json Describe() const override { return Manifest(); }
  void BeginEpoch(int /*epoch*/) override { poison_counts_.push_back(0); }
  absl::Status TransformBatch(std::vector<ImageMaskPair>& batch) override;

  const std::vector<int>& poison_counts() const { return poison_counts_; }
  nlohmann::json Manifest() const;

 private:
  TriggerSpec spec_;
  uint64_t seed_;
  Rng rng_;
  std::vector<int> poison_counts_;
};

// Success iff the mean predicted-foreground fraction on triggered copies of
// the test images is below 10% of the mean ground-truth foreground fraction.
// Benign Dice is measured on the unmodified inputs.
struct BackdoorReport {
  bool success = false;
  double triggered_fg_fraction = 0.0;
  double gt_fg_fraction = 0.0;
  double benign_dice = 0.0;
};

inline constexpr double kBackdoorSuccessRatio = 0.1;

absl::StatusOr<BackdoorReport> BackdoorSuccess(
    const SegmentationOracle& model, std::span<const ImageMaskPair> test_set,
    const TriggerSpec& spec);

nlohmann::json ToJson(const TriggerSpec& spec, const BackdoorReport& report);

}  // namespace segpriv

#endif  // SEGPRIV_POISONING_H_
