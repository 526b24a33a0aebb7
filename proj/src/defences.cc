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
#include <numeric>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "absl/strings/str_join.h"
#include "segpriv/attacks.h"
#include "segpriv/status_macros.h"

namespace segpriv {
namespace {

double Sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

absl::Status CheckUniformShapes(std::span<const ImageMaskPair> batch) {
  if (batch.empty()) return absl::InvalidArgumentError("empty batch");
  const Tensor& first = batch.front().image;
  for (const auto& pair : batch) {
    if (!pair.image.SameShape(first) || pair.mask.height() != first.height() ||
        pair.mask.width() != first.width()) {
      return absl::InvalidArgumentError(
          absl::StrCat("heterogeneous shapes in batch at sample ", pair.id));
    }
  }
  return absl::OkStatus();
}

}  // namespace

// ---------------------------------------------------------------- argmax

LabelMask ArgmaxFilter(const Tensor& probs) { return ProbsToLabels(probs); }

Tensor LabelsToOneHot(const LabelMask& labels, int num_classes) {
  return EncodeGroundTruth(labels, num_classes);
}

absl::StatusOr<Tensor> ArgmaxDefendedModel::PredictProbs(
    const Tensor& image) const {
  ASSIGN_OR_RETURN(Tensor probs, inner_.PredictProbs(image));
  return LabelsToOneHot(ArgmaxFilter(probs), inner_.num_classes());
}

absl::StatusOr<double> ArgmaxDefendedModel::SampleLoss(
    const ImageMaskPair& pair) const {
  ASSIGN_OR_RETURN(Tensor probs, PredictProbs(pair.image));
  return PixelCrossEntropy(probs, pair.mask);
}

// ------------------------------------------------------------------ crop

ImageMaskPair CropPair(const ImageMaskPair& pair, int top, int left, int height,
                       int width) {
  ImageMaskPair out;
  out.id = pair.id;
  out.image = Tensor(pair.image.channels(), height, width);
  out.mask = LabelMask(height, width);
  for (int c = 0; c < pair.image.channels(); ++c) {
    for (int y = 0; y < height; ++y) {
      std::copy_n(pair.image.channel(c) + (top + y) * pair.image.width() + left,
                  width, out.image.channel(c) + y * width);
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out.mask.at(y, x) = pair.mask.at(top + y, left + x);
  }
  return out;
}

absl::StatusOr<std::vector<ImageMaskPair>> RandomCropBatch(
    std::span<const ImageMaskPair> batch, int crop_height, int crop_width,
    Rng& rng) {
  if (crop_height < 1 || crop_width < 1) {
    return absl::InvalidArgumentError("crop size must be positive");
  }
  std::vector<ImageMaskPair> out;
  out.reserve(batch.size());
  for (const auto& pair : batch) {
    const int h = pair.image.height();
    const int w = pair.image.width();
    if (crop_height > h || crop_width > w) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "crop %dx%d larger than image %dx%d (%s)", crop_height, crop_width, h,
          w, pair.id));
    }
    std::uniform_int_distribution<int> top(0, h - crop_height);
    std::uniform_int_distribution<int> left(0, w - crop_width);
    const int y0 = top(rng);
    const int x0 = left(rng);
    out.push_back(CropPair(pair, y0, x0, crop_height, crop_width));
  }
  return out;
}

nlohmann::json RandomCropHook::Describe() const {
  return {{"crop_height", crop_height_}, {"crop_width", crop_width_}};
}

absl::Status RandomCropHook::TransformBatch(std::vector<ImageMaskPair>& batch) {
  ASSIGN_OR_RETURN(batch, RandomCropBatch(batch, crop_height_, crop_width_, rng_));
  return absl::OkStatus();
}

// ---------------------------------------------------------------- mix-up

absl::Status ValidateMixupConfig(const MixupConfig& config) {
  if (config.n < 2) return absl::InvalidArgumentError("mix-up needs n >= 2");
  if (!(config.alpha > 0) || !(config.beta > 0)) {
    return absl::InvalidArgumentError("mix-up Beta parameters must be positive");
  }
  return absl::OkStatus();
}

absl::StatusOr<MixupPlan> DrawMixupPlan(size_t batch_size, int width,
                                        const MixupConfig& config, Rng& rng) {
  RETURN_IF_ERROR(ValidateMixupConfig(config));
  if (batch_size == 0 || width < 1) {
    return absl::InvalidArgumentError("mix-up needs a non-empty batch");
  }
  MixupPlan plan;
  for (int j = 0; j < config.n; ++j) {
    std::vector<size_t> perm(batch_size);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    plan.permutations.push_back(std::move(perm));
  }
  for (int j = 0; j + 1 < config.n; ++j) {
    const double b = SampleBeta(rng, config.alpha, config.beta);
    const int gamma = static_cast<int>(std::ceil(width * b));
    plan.split_columns.push_back(std::clamp(gamma, 1, width));
  }
  std::sort(plan.split_columns.begin(), plan.split_columns.end());
  return plan;
}

absl::StatusOr<std::vector<ImageMaskPair>> ApplyMixup(
    std::span<const ImageMaskPair> batch, const MixupPlan& plan) {
  RETURN_IF_ERROR(CheckUniformShapes(batch));
  const int width = batch.front().image.width();
  const int height = batch.front().image.height();
  const int channels = batch.front().image.channels();
  if (plan.permutations.size() < 2 ||
      plan.split_columns.size() + 1 != plan.permutations.size()) {
    return absl::InvalidArgumentError("mix-up plan is inconsistent");
  }
  for (const auto& perm : plan.permutations) {
    if (perm.size() != batch.size()) {
      return absl::InvalidArgumentError("mix-up permutation size != batch size");
    }
    for (size_t i : perm) {
      if (i >= batch.size()) return absl::InvalidArgumentError("bad permutation");
    }
  }
  if (!std::is_sorted(plan.split_columns.begin(), plan.split_columns.end()) ||
      plan.split_columns.front() < 1 || plan.split_columns.back() > width) {
    return absl::InvalidArgumentError("mix-up split columns out of range");
  }

  // source_of[x] for 0-based column x (1-based column x + 1).
  std::vector<int> source_of(width);
  for (int x = 0; x < width; ++x) {
    int j = 0;
    for (int split : plan.split_columns) j += split <= x + 1;
    source_of[x] = j;
  }

  std::vector<ImageMaskPair> out;
  out.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    ImageMaskPair mixed;
    mixed.image = Tensor(channels, height, width);
    mixed.mask = LabelMask(height, width);
    std::vector<std::string> ids;
    for (const auto& perm : plan.permutations) ids.push_back(batch[perm[i]].id);
    mixed.id = absl::StrJoin(ids, "+");
    for (int x = 0; x < width; ++x) {
      const ImageMaskPair& src = batch[plan.permutations[source_of[x]][i]];
      for (int y = 0; y < height; ++y) {
        for (int c = 0; c < channels; ++c) mixed.image.at(c, y, x) = src.image.at(c, y, x);
        mixed.mask.at(y, x) = src.mask.at(y, x);
      }
    }
    out.push_back(std::move(mixed));
  }
  return out;
}

absl::StatusOr<std::vector<ImageMaskPair>> MixupBatch(
    std::span<const ImageMaskPair> batch, const MixupConfig& config, Rng& rng) {
  RETURN_IF_ERROR(CheckUniformShapes(batch));
  ASSIGN_OR_RETURN(MixupPlan plan, DrawMixupPlan(batch.size(),
                                                 batch.front().image.width(),
                                                 config, rng));
  return ApplyMixup(batch, plan);
}

nlohmann::json MixupHook::Describe() const {
  return {{"n", config_.n}, {"alpha", config_.alpha}, {"beta", config_.beta}};
}

absl::Status MixupHook::TransformBatch(std::vector<ImageMaskPair>& batch) {
  ASSIGN_OR_RETURN(batch, MixupBatch(batch, config_, rng_));
  return absl::OkStatus();
}

// --------------------------------------------------------------- min-max

double MinMaxRegularisedLoss(double task_loss,
                             std::span<const double> adversary_scores,
                             const MinMaxConfig& config) {
  if (adversary_scores.empty() || config.lambda == 0.0) return task_loss;
  const double mean =
      std::accumulate(adversary_scores.begin(), adversary_scores.end(), 0.0) /
      adversary_scores.size();
  return task_loss + config.lambda * mean;
}

MinMaxHook::MinMaxHook(MinMaxConfig config, int num_classes,
                       AttackClassifier adversary, Dataset nonmembers,
                       uint64_t seed)
    : config_(config),
      num_classes_(num_classes),
      adversary_(std::move(adversary)),
      adversary_optimizer_(config.adversary_learning_rate),
      nonmembers_(std::move(nonmembers)),
      rng_(seed) {}

absl::StatusOr<std::shared_ptr<MinMaxHook>> MinMaxHook::Create(
    const MinMaxConfig& config, const SegModelConfig& model_config,
    Dataset nonmembers, uint64_t seed) {
  if (!(config.lambda >= 0)) return absl::InvalidArgumentError("lambda must be >= 0");
  if (!(config.adversary_learning_rate > 0)) {
    return absl::InvalidArgumentError("adversary learning rate must be positive");
  }
  if (nonmembers.empty()) {
    return absl::InvalidArgumentError("min-max needs a non-member reference set");
  }
  AttackClassifierConfig ac;
  ac.in_channels = 2 * OutputChannels(model_config.num_classes);
  ac.height = model_config.height;
  ac.width = model_config.width;
  ASSIGN_OR_RETURN(AttackClassifier adversary,
                   AttackClassifier::Create(ac, DeriveSeed(seed, 21)));
  return std::shared_ptr<MinMaxHook>(
      new MinMaxHook(config, model_config.num_classes, std::move(adversary),
                     std::move(nonmembers), DeriveSeed(seed, 22)));
}

nlohmann::json MinMaxHook::Describe() const {
  return {{"lambda", config_.lambda},
          {"adversary_learning_rate", config_.adversary_learning_rate},
          {"reference_size", nonmembers_.size()}};
}

absl::Status MinMaxHook::BeforeStep(const SegmentationModel& model,
                                    std::span<const ImageMaskPair> batch) {
  if (batch.empty()) return absl::OkStatus();
  std::vector<std::pair<const ImageMaskPair*, int>> work;
  std::uniform_int_distribution<size_t> pick(0, nonmembers_.size() - 1);
  for (const auto& pair : batch) {
    work.emplace_back(&pair, 1);
    work.emplace_back(&nonmembers_[pick(rng_)], 0);
  }
  const auto params = adversary_.parameters();
  ZeroGradients(params);
  for (const auto& [pair, label] : work) {
    ASSIGN_OR_RETURN(Tensor probs, model.PredictProbs(pair->image));
    ASSIGN_OR_RETURN(AttackRecord r, BuildType2Record(pair->id, probs, pair->mask,
                                                      num_classes_, label));
    tape_.Clear();
    const double z = adversary_.Forward(r.input, &tape_);
    adversary_.Backward((Sigmoid(z) - label) / work.size(), tape_);
  }
  adversary_optimizer_.Step(params);
  // AddLossGradient backpropagates through the adversary; those parameter
  // gradients are discarded at the next BeforeStep.
  return absl::OkStatus();
}

double MinMaxHook::AddLossGradient(const ImageMaskPair& sample,
                                   const Tensor& logits, int batch_size,
                                   Tensor& grad_logits) {
  if (config_.lambda == 0.0) return 0.0;
  const Tensor probs = LogitsToProbs(logits);
  const Tensor input =
      ConcatChannels(probs, EncodeGroundTruth(sample.mask, num_classes_));
  tape_.Clear();
  const double score = Sigmoid(adversary_.Forward(input, &tape_));
  const double scale = config_.lambda / batch_size;
  // d(score)/d(input) = score (1 - score) * d(logit)/d(input).
  const Tensor grad_input =
      adversary_.Backward(scale * score * (1.0 - score), tape_);

  const int channels = probs.channels();
  const size_t plane = probs.plane_size();
  if (channels == 1) {
    const float* p = probs.channel(0);
    const float* g = grad_input.channel(0);
    float* out = grad_logits.channel(0);
    for (size_t i = 0; i < plane; ++i) out[i] += g[i] * p[i] * (1.0f - p[i]);
  } else {
    for (size_t i = 0; i < plane; ++i) {
      double dot = 0.0;
      for (int k = 0; k < channels; ++k) {
        dot += static_cast<double>(grad_input.channel(k)[i]) * probs.channel(k)[i];
      }
      for (int k = 0; k < channels; ++k) {
        const double p = probs.channel(k)[i];
        grad_logits.channel(k)[i] +=
            static_cast<float>(p * (grad_input.channel(k)[i] - dot));
      }
    }
  }
  return config_.lambda * score;
}

// ---------------------------------------------------------------- DP-SGD

absl::StatusOr<DpTrainResult> DpTrain(const SegModelConfig& config,
                                      std::span<const ImageMaskPair> train_set,
                                      std::span<const ImageMaskPair> test_set,
                                      const DPConfig& dp, TrainConfig tc) {
  RETURN_IF_ERROR(ValidateDPConfig(dp));
  RETURN_IF_ERROR(ValidateTrainConfig(tc));
  if (train_set.empty()) return absl::InvalidArgumentError("empty training set");
  const size_t n = train_set.size();
  const double q = std::min(1.0, static_cast<double>(tc.batch_size) / n);
  const int steps =
      tc.epochs * static_cast<int>((n + tc.batch_size - 1) / tc.batch_size);
  double sigma = dp.noise_multiplier;
  if (sigma <= 0.0) {
    ASSIGN_OR_RETURN(sigma, CalibrateNoiseMultiplier(dp.target_epsilon,
                                                     dp.target_delta, q, steps));
  }
  if (dp.learning_rate) tc.learning_rate = *dp.learning_rate;
  tc.dp = DpTrainingOptions{dp.clip_norm, sigma};
  ASSIGN_OR_RETURN(SegmentationTrainResult trained,
                   TrainSegmentation(config, train_set, test_set, tc));
  DpTrainResult result{std::move(trained.model), std::move(trained.history)};
  result.noise_multiplier = sigma;
  result.sampling_rate = q;
  result.steps = steps;
  result.epsilon = ComputeEpsilon(sigma, q, steps, dp.target_delta);
  return result;
}

nlohmann::json ToJson(const DPConfig& dp, const DpTrainResult& result) {
  nlohmann::json j = {{"target_epsilon", dp.target_epsilon},
                      {"target_delta", dp.target_delta},
                      {"clip_norm", dp.clip_norm},
                      {"noise_multiplier", result.noise_multiplier},
                      {"sampling_rate", result.sampling_rate},
                      {"steps", result.steps},
                      {"epsilon", result.epsilon}};
  if (dp.learning_rate) j["learning_rate"] = *dp.learning_rate;
  return j;
}

// ------------------------------------------------------------------- KD

absl::StatusOr<std::vector<size_t>> SelectDistillationSet(
    std::span<const double> losses, double threshold) {
  std::vector<size_t> kept;
  for (size_t i = 0; i < losses.size(); ++i) {
    if (losses[i] <= threshold) kept.push_back(i);
  }
  if (kept.empty()) {
    return absl::FailedPreconditionError(absl::StrFormat(
        "no reference sample has loss <= validation loss %.6g", threshold));
  }
  return kept;
}

absl::StatusOr<KdResult> KdProtect(const SegModelConfig& config,
                                   std::span<const ImageMaskPair> private_set,
                                   std::span<const ImageMaskPair> reference_set,
                                   std::span<const ImageMaskPair> validation_set,
                                   const TrainConfig& tc) {
  if (reference_set.empty() || validation_set.empty()) {
    return absl::InvalidArgumentError("KD needs reference and validation sets");
  }
  {
    std::vector<std::string> ids;
    for (const auto& p : private_set) ids.push_back(p.id);
    std::sort(ids.begin(), ids.end());
    for (const auto& p : reference_set) {
      if (std::binary_search(ids.begin(), ids.end(), p.id)) {
        return absl::InvalidArgumentError(
            absl::StrCat("reference sample ", p.id, " is also private"));
      }
    }
  }
  ASSIGN_OR_RETURN(SegmentationTrainResult teacher,
                   TrainSegmentation(config, private_set, validation_set, tc));

  double validation_loss = 0.0;
  for (const auto& pair : validation_set) {
    ASSIGN_OR_RETURN(double loss, teacher.model.SampleLoss(pair));
    validation_loss += loss;
  }
  validation_loss /= validation_set.size();

  Dataset relabelled;
  std::vector<double> losses;
  for (const auto& pair : reference_set) {
    ASSIGN_OR_RETURN(Tensor probs, teacher.model.PredictProbs(pair.image));
    ImageMaskPair labelled{pair.id, pair.image, ArgmaxFilter(probs)};
    losses.push_back(PixelCrossEntropy(probs, labelled.mask));
    relabelled.push_back(std::move(labelled));
  }
  ASSIGN_OR_RETURN(std::vector<size_t> kept,
                   SelectDistillationSet(losses, validation_loss));
  Dataset student_set;
  std::vector<std::string> selected_ids;
  for (size_t i : kept) {
    selected_ids.push_back(relabelled[i].id);
    student_set.push_back(std::move(relabelled[i]));
  }

  TrainConfig student_tc = tc;
  student_tc.seed = DeriveSeed(tc.seed, 31);
  ASSIGN_OR_RETURN(SegmentationTrainResult student,
                   TrainSegmentation(config, student_set, validation_set, student_tc));
  return KdResult{std::move(teacher.model), std::move(student.model),
                  std::move(teacher.history), std::move(student.history),
                  validation_loss, std::move(selected_ids)};
}

}  // namespace segpriv
