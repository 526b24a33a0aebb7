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

#include "segpriv/poisoning.h"

#include <algorithm>
#include <numeric>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "segpriv/metrics.h"
#include "segpriv/status_macros.h"

namespace segpriv {
namespace {

double ForegroundFraction(const LabelMask& mask) {
  auto labels = mask.labels();
  if (labels.empty()) return 0.0;
  const auto fg = std::count_if(labels.begin(), labels.end(),
                                [](uint8_t l) { return l != 0; });
  return static_cast<double>(fg) / labels.size();
}

// Stamps `pair` in place with probability spec.poison_prob.
absl::StatusOr<bool> MaybePoison(ImageMaskPair& pair, const TriggerSpec& spec,
                                 Rng& rng) {
  std::bernoulli_distribution coin(spec.poison_prob);
  if (!coin(rng)) return false;
  ASSIGN_OR_RETURN(pair, StampTrigger(pair, spec));
  return true;
}

}  // namespace

std::string_view TriggerShapeName(TriggerShape shape) {
  return shape == TriggerShape::kLine ? "line" : "square";
}

absl::StatusOr<TriggerShape> ParseTriggerShape(std::string_view name) {
  if (name == "line") return TriggerShape::kLine;
  if (name == "square") return TriggerShape::kSquare;
  return absl::InvalidArgumentError(absl::StrCat("unknown trigger shape: ", std::string(name)));
}

absl::Status ValidateTriggerSpec(const TriggerSpec& spec) {
  if (spec.value_8bit < 0 || spec.value_8bit > 255) {
    return absl::InvalidArgumentError("trigger value must be in [0, 255]");
  }
  if (!(spec.poison_prob >= 0.0 && spec.poison_prob <= 1.0)) {
    return absl::InvalidArgumentError("poison probability must be in [0, 1]");
  }
  return absl::OkStatus();
}

nlohmann::json ToJson(const TriggerSpec& spec) {
  return {{"shape", TriggerShapeName(spec.shape)},
          {"value_8bit", spec.value_8bit},
          {"poison_prob", spec.poison_prob}};
}

absl::StatusOr<ImageMaskPair> StampTrigger(const ImageMaskPair& pair,
                                           const TriggerSpec& spec) {
  RETURN_IF_ERROR(ValidateTriggerSpec(spec));
  const int h = pair.image.height();
  const int w = pair.image.width();
  const int rows = spec.shape == TriggerShape::kLine ? 1 : 3;
  const int cols = spec.shape == TriggerShape::kLine ? w : 3;
  if (h < rows || w < cols || w < 1) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "image %dx%d too small for %s trigger", h, w,
        std::string(TriggerShapeName(spec.shape))));
  }
  ImageMaskPair out = pair;
  const float value = static_cast<float>(spec.value_8bit / 255.0);
  for (int c = 0; c < out.image.channels(); ++c) {
    for (int y = 0; y < rows; ++y) {
      for (int x = 0; x < cols; ++x) out.image.at(c, y, x) = value;
    }
  }
  std::fill(out.mask.labels().begin(), out.mask.labels().end(), 0);
  return out;
}

PoisonedLoader::PoisonedLoader(Dataset dataset, TriggerSpec spec,
                               int batch_size, uint64_t seed)
    : dataset_(std::move(dataset)),
      spec_(spec),
      batch_size_(batch_size),
      seed_(seed),
      order_rng_(DeriveSeed(seed, 41)),
      poison_rng_(DeriveSeed(seed, 42)) {}

absl::StatusOr<PoisonedLoader> PoisonedLoader::Create(Dataset dataset,
                                                      const TriggerSpec& spec,
                                                      int batch_size,
                                                      uint64_t seed) {
  RETURN_IF_ERROR(ValidateTriggerSpec(spec));
  if (batch_size < 1) return absl::InvalidArgumentError("batch size must be >= 1");
  if (dataset.empty()) return absl::InvalidArgumentError("empty dataset");
  for (const auto& pair : dataset) {
    ASSIGN_OR_RETURN(ImageMaskPair unused, StampTrigger(pair, spec));
    (void)unused;
  }
  return PoisonedLoader(std::move(dataset), spec, batch_size, seed);
}

std::vector<std::vector<ImageMaskPair>> PoisonedLoader::NextEpoch() {
  std::vector<size_t> order(dataset_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), order_rng_);
  std::vector<std::vector<ImageMaskPair>> batches;
  int count = 0;
  for (size_t start = 0; start < order.size(); start += batch_size_) {
    const size_t end = std::min(order.size(), start + batch_size_);
    std::vector<ImageMaskPair> batch;
    for (size_t k = start; k < end; ++k) {
      ImageMaskPair pair = dataset_[order[k]];
      // Shapes were validated in Create, so stamping cannot fail here.
      count += *MaybePoison(pair, spec_, poison_rng_);
      batch.push_back(std::move(pair));
    }
    batches.push_back(std::move(batch));
  }
  poison_counts_.push_back(count);
  return batches;
}

nlohmann::json PoisonedLoader::Manifest() const {
  return {{"trigger", ToJson(spec_)},
          {"seed", seed_},
          {"poison_counts_per_epoch", poison_counts_}};
}

absl::Status PoisoningHook::TransformBatch(std::vector<ImageMaskPair>& batch) {
  if (poison_counts_.empty()) poison_counts_.push_back(0);
  for (auto& pair : batch) {
    ASSIGN_OR_RETURN(bool poisoned, MaybePoison(pair, spec_, rng_));
    poison_counts_.back() += poisoned;
  }
  return absl::OkStatus();
}

nlohmann::json PoisoningHook::Manifest() const {
  return {{"trigger", ToJson(spec_)},
          {"seed", seed_},
          {"poison_counts_per_epoch", poison_counts_}};
}

absl::StatusOr<BackdoorReport> BackdoorSuccess(
    const SegmentationOracle& model, std::span<const ImageMaskPair> test_set,
    const TriggerSpec& spec) {
  if (test_set.empty()) return absl::InvalidArgumentError("empty test set");
  BackdoorReport report;
  double triggered = 0.0;
  double gt = 0.0;
  for (const auto& pair : test_set) {
    gt += ForegroundFraction(pair.mask);
    ASSIGN_OR_RETURN(ImageMaskPair stamped, StampTrigger(pair, spec));
    ASSIGN_OR_RETURN(Tensor probs, model.PredictProbs(stamped.image));
    triggered += ForegroundFraction(ProbsToLabels(probs));
  }
  report.gt_fg_fraction = gt / test_set.size();
  report.triggered_fg_fraction = triggered / test_set.size();
  if (report.gt_fg_fraction <= 0.0) {
    return absl::InvalidArgumentError("test set has no ground-truth foreground");
  }
  report.success = report.triggered_fg_fraction <
                   kBackdoorSuccessRatio * report.gt_fg_fraction;
  ASSIGN_OR_RETURN(report.benign_dice, MeanDice(model, test_set));
  return report;
}

nlohmann::json ToJson(const TriggerSpec& spec, const BackdoorReport& report) {
  return {{"poison_prob", spec.poison_prob},
          {"trigger", TriggerShapeName(spec.shape)},
          {"value", spec.value_8bit},
          {"success", report.success},
          {"triggered_fg_fraction", report.triggered_fg_fraction},
          {"gt_fg_fraction", report.gt_fg_fraction},
          {"benign_dice", report.benign_dice}};
}

}  // namespace segpriv
