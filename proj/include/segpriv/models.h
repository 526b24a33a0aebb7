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

#ifndef SEGPRIV_MODELS_H_
#define SEGPRIV_MODELS_H_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "nlohmann/json.hpp"
#include "segpriv/attack_record.h"
#include "segpriv/data.h"
#include "segpriv/dp.h"
#include "segpriv/nn.h"
#include "segpriv/random.h"
#include "segpriv/tensor.h"

namespace segpriv {

// Encoder families available to SegModelConfig::encoder_id.
//   small-cnn       one 3x3 conv per stage (desk-scale default)
//   vgg-lite        two 3x3 convs per stage
//   resnet-lite     residual basic block per stage
//   mobilenet-lite  inverted residual (expand, depthwise, project) per stage
const std::vector<std::string>& RegisteredEncoders();

struct SegModelConfig {
  std::string encoder_id = "small-cnn";
  int num_classes = 2;  // binary tasks use a single sigmoid channel
  int height = 32;
  int width = 32;
  int in_channels = 1;
  int base_width = 8;
};

absl::Status ValidateSegModelConfig(const SegModelConfig& config);
nlohmann::json ToJson(const SegModelConfig& config);
absl::StatusOr<SegModelConfig> SegModelConfigFromJson(const nlohmann::json& j);

inline int OutputChannels(int num_classes) {
  return num_classes == 2 ? 1 : num_classes;
}

// Black-box view of a segmentation model: the only surface attacks use.
class SegmentationOracle {
 public:
  virtual ~SegmentationOracle() = default;

  // Per-pixel probabilities: 1 x H x W for binary, K x H x W otherwise.
  virtual absl::StatusOr<Tensor> PredictProbs(const Tensor& image) const = 0;
  // Mean per-pixel cross-entropy against the sample's ground truth.
  virtual absl::StatusOr<double> SampleLoss(const ImageMaskPair& pair) const = 0;
  virtual int num_classes() const = 0;
};

// Converts logits to probabilities (sigmoid for 1 channel, softmax else).
Tensor LogitsToProbs(const Tensor& logits);

// Mean per-pixel cross-entropy computed from logits. When `grad` is non-null
// it receives d(loss)/d(logits).
double LogitCrossEntropy(const Tensor& logits, const LabelMask& mask,
                         Tensor* grad);

// Mean per-pixel cross-entropy of a probability mask. Probabilities are
// floored at kProbabilityFloor so label-only outputs give finite losses.
inline constexpr double kProbabilityFloor = 1e-7;
double PixelCrossEntropy(const Tensor& probs, const LabelMask& mask);

// Per-pixel labels: probability >= 0.5 for one channel, argmax otherwise.
LabelMask ProbsToLabels(const Tensor& probs);

// Encoder-decoder (U-Net style) segmentation network.
class SegmentationModel : public SegmentationOracle {
 public:
  static absl::StatusOr<SegmentationModel> Create(const SegModelConfig& config,
                                                  uint64_t seed);
  static absl::StatusOr<SegmentationModel> Load(
      const std::filesystem::path& path);

  SegmentationModel(SegmentationModel&&) noexcept;
  SegmentationModel& operator=(SegmentationModel&&) noexcept;
  ~SegmentationModel() override;

  const SegModelConfig& config() const { return config_; }

  // Raw logits; any input whose sides are multiples of 4 is accepted.
  Tensor Forward(const Tensor& image, nn::Tape* tape) const;
  // Accumulates parameter gradients.
  void Backward(const Tensor& grad_logits, nn::Tape& tape);
  std::vector<nn::Parameter*> parameters();
  size_t num_parameters() const;

  absl::StatusOr<Tensor> PredictProbs(const Tensor& image) const override;
  absl::StatusOr<double> SampleLoss(const ImageMaskPair& pair) const override;
  int num_classes() const override { return config_.num_classes; }

  absl::Status Save(const std::filesystem::path& path) const;

 private:
  class Network;
  SegmentationModel(SegModelConfig config, std::unique_ptr<Network> net);
  absl::Status CheckInput(const Tensor& image) const;

  SegModelConfig config_;
  std::unique_ptr<Network> net_;
};

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  // Applies one update from the gradients stored in `params`.
  void Step(std::span<nn::Parameter* const> params);

 private:
  double lr_, beta1_, beta2_, epsilon_;
  int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

void ZeroGradients(std::span<nn::Parameter* const> params);

// Per-batch extension point for training. Hooks run in declaration order.
class TrainingHook {
 public:
  virtual ~TrainingHook() = default;

  virtual std::string name() const = 0;
  // Parameters recorded in run manifests.
  virtual nlohmann::json Describe() const { return nlohmann::json::object(); }

  virtual void BeginEpoch(int /*epoch*/) {}
  // Rewrites the batch before the forward pass (cropping, mix-up, poisoning).
  virtual absl::Status TransformBatch(std::vector<ImageMaskPair>& /*batch*/) {
    return absl::OkStatus();
  }
  // Called once per step after TransformBatch, before any gradient work.
  virtual absl::Status BeforeStep(const SegmentationModel& /*model*/,
                                  std::span<const ImageMaskPair> /*batch*/) {
    return absl::OkStatus();
  }
  // Adds this hook's loss term for one sample to `grad_logits` (already
  // scaled for a batch of `batch_size`) and returns the term's value.
  virtual double AddLossGradient(const ImageMaskPair& /*sample*/,
                                 const Tensor& /*logits*/, int /*batch_size*/,
                                 Tensor& /*grad_logits*/) {
    return 0.0;
  }
};

// DP-SGD switches the loop to Poisson sampling with per-sample clipping.
struct DpTrainingOptions {
  double clip_norm = 1.0;
  double noise_multiplier = 1.0;
};

struct TrainConfig {
  int epochs = 70;
  int batch_size = 8;
  double learning_rate = 1e-4;
  uint64_t seed = 0;
  std::vector<std::shared_ptr<TrainingHook>> hooks;
  std::optional<DpTrainingOptions> dp;
};

absl::Status ValidateTrainConfig(const TrainConfig& config);

struct TrainHistory {
  std::vector<double> loss;        // per epoch, mean over samples
  std::vector<double> train_dice;  // per epoch, on the batches as trained
  double test_dice = 0.0;          // final model on the test set
};

std::string HistoryCsv(const TrainHistory& history);

struct SegmentationTrainResult {
  SegmentationModel model;
  TrainHistory history;
};

absl::StatusOr<SegmentationTrainResult> TrainSegmentation(
    const SegModelConfig& config, std::span<const ImageMaskPair> train_set,
    std::span<const ImageMaskPair> test_set, const TrainConfig& tc);

// Mean foreground Dice of the model's label output over `set`.
absl::StatusOr<double> MeanDice(const SegmentationOracle& model,
                                std::span<const ImageMaskPair> set);

// ------------------------------------------------------ attack classifier

struct AttackClassifierConfig {
  int in_channels = 2;
  int height = 32;
  int width = 32;
  int base_width = 8;
};

nlohmann::json ToJson(const AttackClassifierConfig& config);

// Small CNN mapping an attack record input to a membership probability.
class AttackClassifier {
 public:
  static absl::StatusOr<AttackClassifier> Create(
      const AttackClassifierConfig& config, uint64_t seed);
  static absl::StatusOr<AttackClassifier> Load(
      const std::filesystem::path& path);

  AttackClassifier(AttackClassifier&&) noexcept;
  AttackClassifier& operator=(AttackClassifier&&) noexcept;
  ~AttackClassifier();

  const AttackClassifierConfig& config() const { return config_; }

  // Membership logit.
  double Forward(const Tensor& input, nn::Tape* tape) const;
  // Returns the gradient w.r.t. the input and accumulates parameter grads.
  Tensor Backward(double grad_logit, nn::Tape& tape);
  std::vector<nn::Parameter*> parameters();

  absl::StatusOr<double> MembershipProbability(const Tensor& input) const;

  absl::Status Save(const std::filesystem::path& path) const;

 private:
  AttackClassifier(AttackClassifierConfig config,
                   std::unique_ptr<nn::Sequential> net);

  AttackClassifierConfig config_;
  std::unique_ptr<nn::Sequential> net_;
};

// Binary cross-entropy training. kInvalidArgument on empty or ragged input.
absl::StatusOr<AttackClassifier> TrainAttackClassifier(
    std::span<const AttackRecord> records, const TrainConfig& tc);

// Presets quoted from the original experiments.
TrainConfig PublishedSegmentationTrainConfig();
TrainConfig PublishedCropTrainingConfig();
TrainConfig PublishedBinaryAttackTrainConfig();
TrainConfig PublishedMultiClassAttackTrainConfig();

}  // namespace segpriv

#endif  // SEGPRIV_MODELS_H_
