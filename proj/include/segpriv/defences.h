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

// Membership-inference defences: output filtering (argmax), batch
// transforms (crop, mix-up), loss regularisation (min-max) and alternative
// training procedures (DP-SGD, knowledge distillation).

#ifndef SEGPRIV_DEFENCES_H_
#define SEGPRIV_DEFENCES_H_

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "nlohmann/json.hpp"
#include "segpriv/data.h"
#include "segpriv/dp.h"
#include "segpriv/models.h"
#include "segpriv/random.h"
#include "segpriv/tensor.h"

namespace segpriv {

// ---------------------------------------------------------------- argmax

// Binary: round half up (p >= 0.5 -> 1). Multi-class: per-pixel argmax,
// lowest class index on ties.
LabelMask ArgmaxFilter(const Tensor& probs);

// Re-encodes a label mask in prediction layout: a 0/1 channel for binary
// tasks, one-hot over K channels otherwise.
Tensor LabelsToOneHot(const LabelMask& labels, int num_classes);

// Exposes only the label output of `inner`. Losses are computed on the
// one-hot re-encoding with the probability floor applied.
class ArgmaxDefendedModel : public SegmentationOracle {
 public:
  explicit ArgmaxDefendedModel(const SegmentationOracle& inner) : inner_(inner) {}

  absl::StatusOr<Tensor> PredictProbs(const Tensor& image) const override;
  absl::StatusOr<double> SampleLoss(const ImageMaskPair& pair) const override;
  int num_classes() const override { return inner_.num_classes(); }

 private:
  const SegmentationOracle& inner_;
};

// ------------------------------------------------------------------ crop

ImageMaskPair CropPair(const ImageMaskPair& pair, int top, int left, int height,
                       int width);

// Crops every pair at its own uniformly drawn offset. kInvalidArgument when
// the crop exceeds any image.
absl::StatusOr<std::vector<ImageMaskPair>> RandomCropBatch(
    std::span<const ImageMaskPair> batch, int crop_height, int crop_width,
    Rng& rng);

class RandomCropHook : public TrainingHook {
 public:
  RandomCropHook(int crop_height, int crop_width, uint64_t seed)
      : crop_height_(crop_height), crop_width_(crop_width), rng_(seed) {}

  std::string name() const override { return "crop"; }
  nlohmann::json Describe() const override;
  absl::Status TransformBatch(std::vector<ImageMaskPair>& batch) override;

 private:
  int crop_height_;
  int crop_width_;
  Rng rng_;
};

// ---------------------------------------------------------------- mix-up

struct MixupConfig {
  int n = 2;  // number of permuted copies combined
  double alpha = 2.0;
  double beta = 2.0;
};

absl::Status ValidateMixupConfig(const MixupConfig& config);

// One draw of the batch-level randomness. `permutations` has n entries;
// `split_columns` holds n-1 non-decreasing 1-based column indices. Output
// column c (1-based) comes from permutation j where j is the number of split
// points <= c. For n = 2 this is gamma = ceil(W * b): columns 1..gamma-1
// from the first permutation and gamma..W from the second.
struct MixupPlan {
  std::vector<std::vector<size_t>> permutations;
  std::vector<int> split_columns;
};

absl::StatusOr<MixupPlan> DrawMixupPlan(size_t batch_size, int width,
                                        const MixupConfig& config, Rng& rng);

// Deterministic part of mix-up. kInvalidArgument on heterogeneous shapes or
// a plan that does not fit the batch.
absl::StatusOr<std::vector<ImageMaskPair>> ApplyMixup(
    std::span<const ImageMaskPair> batch, const MixupPlan& plan);

absl::StatusOr<std::vector<ImageMaskPair>> MixupBatch(
    std::span<const ImageMaskPair> batch, const MixupConfig& config, Rng& rng);

class MixupHook : public TrainingHook {
 public:
  MixupHook(MixupConfig config, uint64_t seed) : config_(config), rng_(seed) {}

  std::string name() const override { return "mixup"; }
  nlohmann::json Describe() const override;
  absl::Status TransformBatch(std::vector<ImageMaskPair>& batch) override;

 private:
  MixupConfig config_;
  Rng rng_;
};

// --------------------------------------------------------------- min-max

struct MinMaxConfig {
  double lambda = 0.05;
  double adversary_learning_rate = 1e-3;
};

// task_loss + lambda * mean(scores). Zero scores or lambda give task_loss.
double MinMaxRegularisedLoss(double task_loss,
                             std::span<const double> adversary_scores,
                             const MinMaxConfig& config);

// Trains a Type-II adversary alongside the victim. Before each victim step
// the adversary takes one step on the batch (members) against an equally
// sized draw from `nonmembers`; the victim loss then gains lambda times the
// adversary's membership probability on each of its training samples.
class MinMaxHook : public TrainingHook {
 public:
  static absl::StatusOr<std::shared_ptr<MinMaxHook>> Create(
      const MinMaxConfig& config, const SegModelConfig& model_config,
      Dataset nonmembers, uint64_t seed);

  std::string name() const override { return "minmax"; }
  nlohmann::json Describe() const override;
  absl::Status BeforeStep(const SegmentationModel& model,
                          std::span<const ImageMaskPair> batch) override;
  double AddLossGradient(const ImageMaskPair& sample, const Tensor& logits,
                         int batch_size, Tensor& grad_logits) override;

  const AttackClassifier& adversary() const { return adversary_; }

 private:
  MinMaxHook(MinMaxConfig config, int num_classes, AttackClassifier adversary,
             Dataset nonmembers, uint64_t seed);

  MinMaxConfig config_;
  int num_classes_;
  AttackClassifier adversary_;
  Adam adversary_optimizer_;
  Dataset nonmembers_;
  Rng rng_;
  nn::Tape tape_;
};

// ---------------------------------------------------------------- DP-SGD

struct DpTrainResult {
  SegmentationModel model;
  TrainHistory history;
  double noise_multiplier = 0.0;
  double epsilon = 0.0;
  double sampling_rate = 0.0;
  int steps = 0;
};

// Calibrates the noise multiplier (unless dp.noise_multiplier > 0) so the
// accounted epsilon meets dp.target_epsilon after tc.epochs, applies the
// learning-rate override and trains with per-sample clipping.
absl::StatusOr<DpTrainResult> DpTrain(const SegModelConfig& config,
                                      std::span<const ImageMaskPair> train_set,
                                      std::span<const ImageMaskPair> test_set,
                                      const DPConfig& dp, TrainConfig tc);

nlohmann::json ToJson(const DPConfig& dp, const DpTrainResult& result);

// ------------------------------------------------------------------- KD

// Indices i with losses[i] <= threshold. kFailedPrecondition when empty.
absl::StatusOr<std::vector<size_t>> SelectDistillationSet(
    std::span<const double> losses, double threshold);

struct KdResult {
  SegmentationModel teacher;
  SegmentationModel model;  // the protected model
  TrainHistory teacher_history;
  TrainHistory history;
  double validation_loss = 0.0;
  std::vector<std::string> selected_ids;
};

// Trains a teacher on `private_set`, labels `reference_set` with the
// teacher's argmax output, keeps reference samples whose teacher loss on
// those labels is at most the teacher's mean loss on `validation_set`, and
// trains the protected model from scratch on the kept pairs.
absl::StatusOr<KdResult> KdProtect(const SegModelConfig& config,
                                   std::span<const ImageMaskPair> private_set,
                                   std::span<const ImageMaskPair> reference_set,
                                   std::span<const ImageMaskPair> validation_set,
                                   const TrainConfig& tc);

}  // namespace segpriv

#endif  // SEGPRIV_DEFENCES_H_
