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

#include "segpriv/models.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "segpriv/metrics.h"
#include "segpriv/status_macros.h"

namespace segpriv {
namespace {

constexpr char kCheckpointMagic[8] = {'S', 'E', 'G', 'P', 'R', 'I', 'V', 'M'};
constexpr uint32_t kCheckpointVersion = 1;

// Layout: magic[8] | u32 version | u32 header bytes | header JSON |
//         u64 float count | float32 values (host byte order, little endian
//         on every supported platform).
absl::Status WriteCheckpoint(const std::filesystem::path& path,
                             const nlohmann::json& header,
                             std::span<nn::Parameter* const> params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    return absl::PermissionDeniedError(
        absl::StrCat("cannot open ", path.string(), " for writing"));
  }
  const std::string text = header.dump();
  const uint32_t header_size = static_cast<uint32_t>(text.size());
  uint64_t count = 0;
  for (const auto* p : params) count += p->value.size();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), 4);
  out.write(reinterpret_cast<const char*>(&header_size), 4);
  out.write(text.data(), text.size());
  out.write(reinterpret_cast<const char*>(&count), 8);
  for (const auto* p : params) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              p->value.size() * sizeof(float));
  }
  if (!out) {
    return absl::DataLossError(absl::StrCat("short write to ", path.string()));
  }
  return absl::OkStatus();
}

struct RawCheckpoint {
  nlohmann::json header;
  std::vector<float> values;
};

absl::StatusOr<RawCheckpoint> ReadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path.string()));
  char magic[8];
  uint32_t version = 0;
  uint32_t header_size = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&header_size), 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    return absl::DataLossError(absl::StrCat(path.string(), " is not a checkpoint"));
  }
  if (version != kCheckpointVersion) {
    return absl::UnimplementedError(
        absl::StrFormat("unsupported checkpoint version %d", version));
  }
  std::string text(header_size, '\0');
  in.read(text.data(), header_size);
  uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  if (!in) return absl::DataLossError("truncated checkpoint header");
  RawCheckpoint raw;
  raw.header = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (raw.header.is_discarded()) {
    return absl::DataLossError("checkpoint header is not valid JSON");
  }
  raw.values.resize(count);
  in.read(reinterpret_cast<char*>(raw.values.data()), count * sizeof(float));
  if (!in) return absl::DataLossError("truncated checkpoint parameters");
  return raw;
}

absl::Status AssignParameters(std::span<nn::Parameter* const> params,
                              const std::vector<float>& values) {
  size_t expected = 0;
  for (const auto* p : params) expected += p->value.size();
  if (expected != values.size()) {
    return absl::DataLossError(absl::StrFormat(
        "checkpoint holds %d values, architecture needs %d", values.size(),
        expected));
  }
  size_t offset = 0;
  for (auto* p : params) {
    std::copy(values.begin() + offset, values.begin() + offset + p->value.size(),
              p->value.begin());
    offset += p->value.size();
  }
  return absl::OkStatus();
}

double Sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double Softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

std::unique_ptr<nn::Layer> EncoderBlock(const std::string& encoder, int in,
                                        int out, Rng& rng) {
  auto block = std::make_unique<nn::Sequential>();
  if (encoder == "small-cnn") {
    block->Emplace<nn::Conv2d>(in, out, 3, rng).Emplace<nn::ReLU>();
  } else if (encoder == "vgg-lite") {
    block->Emplace<nn::Conv2d>(in, out, 3, rng)
        .Emplace<nn::ReLU>()
        .Emplace<nn::Conv2d>(out, out, 3, rng)
        .Emplace<nn::ReLU>();
  } else if (encoder == "resnet-lite") {
    auto body = std::make_unique<nn::Sequential>();
    body->Emplace<nn::Conv2d>(in, out, 3, rng)
        .Emplace<nn::ReLU>()
        .Emplace<nn::Conv2d>(out, out, 3, rng);
    std::unique_ptr<nn::Layer> shortcut;
    if (in != out) shortcut = std::make_unique<nn::Conv2d>(in, out, 1, rng);
    block->Emplace<nn::Residual>(std::move(body), std::move(shortcut))
        .Emplace<nn::ReLU>();
  } else {  // mobilenet-lite
    const int hidden = 2 * out;
    auto body = std::make_unique<nn::Sequential>();
    body->Emplace<nn::Conv2d>(in, hidden, 1, rng)
        .Emplace<nn::ReLU>()
        .Emplace<nn::DepthwiseConv3x3>(hidden, rng)
        .Emplace<nn::ReLU>()
        .Emplace<nn::Conv2d>(hidden, out, 1, rng);
    std::unique_ptr<nn::Layer> shortcut;
    if (in != out) shortcut = std::make_unique<nn::Conv2d>(in, out, 1, rng);
    block->Emplace<nn::Residual>(std::move(body), std::move(shortcut))
        .Emplace<nn::ReLU>();
  }
  return block;
}

std::unique_ptr<nn::Layer> DecoderBlock(int in, int out, Rng& rng) {
  auto block = std::make_unique<nn::Sequential>();
  block->Emplace<nn::Conv2d>(in, out, 3, rng).Emplace<nn::ReLU>();
  return block;
}

}  // namespace

// ---------------------------------------------------------------- config

const std::vector<std::string>& RegisteredEncoders() {
  static const auto* const kEncoders = new std::vector<std::string>{
      "small-cnn", "vgg-lite", "resnet-lite", "mobilenet-lite"};
  return *kEncoders;
}

absl::Status ValidateSegModelConfig(const SegModelConfig& config) {
  const auto& names = RegisteredEncoders();
  if (std::find(names.begin(), names.end(), config.encoder_id) == names.end()) {
    return absl::NotFoundError(
        absl::StrCat("unregistered encoder: ", config.encoder_id));
  }
  if (config.num_classes < 2 || config.num_classes > 255) {
    return absl::InvalidArgumentError("num_classes must lie in [2, 255]");
  }
  if (config.height < 4 || config.width < 4 || config.height % 4 != 0 ||
      config.width % 4 != 0) {
    return absl::InvalidArgumentError(
        "input height and width must be positive multiples of 4");
  }
  if (config.in_channels < 1 || config.base_width < 1) {
    return absl::InvalidArgumentError("channel counts must be positive");
  }
  return absl::OkStatus();
}

nlohmann::json ToJson(const SegModelConfig& config) {
  return {{"encoder_id", config.encoder_id},
          {"num_classes", config.num_classes},
          {"height", config.height},
          {"width", config.width},
          {"in_channels", config.in_channels},
          {"base_width", config.base_width}};
}

absl::StatusOr<SegModelConfig> SegModelConfigFromJson(const nlohmann::json& j) {
  SegModelConfig c;
  try {
    c.encoder_id = j.at("encoder_id").get<std::string>();
    c.num_classes = j.at("num_classes").get<int>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.base_width = j.at("base_width").get<int>();
  } catch (const nlohmann::json::exception& e) {
    return absl::DataLossError(absl::StrCat("bad model config: ", e.what()));
  }
  RETURN_IF_ERROR(ValidateSegModelConfig(c));
  return c;
}

// ------------------------------------------------------- loss and probs

Tensor LogitsToProbs(const Tensor& logits) {
  Tensor probs(logits.channels(), logits.height(), logits.width());
  if (logits.channels() == 1) {
    auto in = logits.values();
    auto out = probs.values();
    for (size_t i = 0; i < in.size(); ++i) {
      out[i] = static_cast<float>(Sigmoid(in[i]));
    }
    return probs;
  }
  const size_t n = logits.plane_size();
  const int k = logits.channels();
  for (size_t i = 0; i < n; ++i) {
    double m = logits.channel(0)[i];
    for (int c = 1; c < k; ++c) m = std::max<double>(m, logits.channel(c)[i]);
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += std::exp(logits.channel(c)[i] - m);
    for (int c = 0; c < k; ++c) {
      probs.channel(c)[i] = static_cast<float>(std::exp(logits.channel(c)[i] - m) / z);
    }
  }
  return probs;
}

double LogitCrossEntropy(const Tensor& logits, const LabelMask& mask,
                         Tensor* grad) {
  const size_t n = logits.plane_size();
  if (grad) *grad = Tensor(logits.channels(), logits.height(), logits.width());
  double total = 0.0;
  auto labels = mask.labels();
  if (logits.channels() == 1) {
    const float* z = logits.channel(0);
    for (size_t i = 0; i < n; ++i) {
      const double y = labels[i] ? 1.0 : 0.0;
      total += Softplus(z[i]) - y * z[i];
      if (grad) grad->channel(0)[i] = static_cast<float>((Sigmoid(z[i]) - y) / n);
    }
    return total / n;
  }
  const int k = logits.channels();
  for (size_t i = 0; i < n; ++i) {
    double m = logits.channel(0)[i];
    for (int c = 1; c < k; ++c) m = std::max<double>(m, logits.channel(c)[i]);
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += std::exp(logits.channel(c)[i] - m);
    const double log_z = m + std::log(z);
    total += log_z - logits.channel(labels[i])[i];
    if (grad) {
      for (int c = 0; c < k; ++c) {
        const double p = std::exp(logits.channel(c)[i] - log_z);
        grad->channel(c)[i] =
            static_cast<float>((p - (c == labels[i] ? 1.0 : 0.0)) / n);
      }
    }
  }
  return total / n;
}

double PixelCrossEntropy(const Tensor& probs, const LabelMask& mask) {
  const size_t n = probs.plane_size();
  auto labels = mask.labels();
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double p;
    if (probs.channels() == 1) {
      const double fg = probs.channel(0)[i];
      p = labels[i] ? fg : 1.0 - fg;
    } else {
      p = probs.channel(labels[i])[i];
    }
    total -= std::log(std::max(p, kProbabilityFloor));
  }
  return total / n;
}

LabelMask ProbsToLabels(const Tensor& probs) {
  LabelMask out(probs.height(), probs.width());
  const size_t n = probs.plane_size();
  auto labels = out.labels();
  if (probs.channels() == 1) {
    for (size_t i = 0; i < n; ++i) labels[i] = probs.channel(0)[i] >= 0.5f;
    return out;
  }
  for (size_t i = 0; i < n; ++i) {
    int best = 0;
    for (int c = 1; c < probs.channels(); ++c) {
      if (probs.channel(c)[i] > probs.channel(best)[i]) best = c;
    }
    labels[i] = static_cast<uint8_t>(best);
  }
  return out;
}

// --------------------------------------------------- SegmentationModel

class SegmentationModel::Network {
 public:
  Network(const SegModelConfig& c, Rng& rng) {
    const int w = c.base_width;
    enc0_ = EncoderBlock(c.encoder_id, c.in_channels, w, rng);
    enc1_ = EncoderBlock(c.encoder_id, w, 2 * w, rng);
    enc2_ = EncoderBlock(c.encoder_id, 2 * w, 4 * w, rng);
    auto context = std::make_unique<nn::Sequential>();
    context->Emplace<nn::GlobalContext>()
        .Emplace<nn::Conv2d>(8 * w, 4 * w, 1, rng)
        .Emplace<nn::ReLU>();
    context_ = std::move(context);
    dec1_ = DecoderBlock(4 * w + 2 * w, 2 * w, rng);
    dec0_ = DecoderBlock(2 * w + w, w, rng);
    head_ = std::make_unique<nn::Conv2d>(w, OutputChannels(c.num_classes), 1, rng);
    skip0_ = w;
    skip1_ = 2 * w;
    bottleneck_ = 4 * w;
  }

  Tensor Forward(const Tensor& x, nn::Tape* tape) const {
    Tensor e0 = enc0_->Forward(x, tape);
    Tensor e1 = enc1_->Forward(pool_.Forward(e0, tape), tape);
    Tensor b = context_->Forward(enc2_->Forward(pool_.Forward(e1, tape), tape),
                                 tape);
    Tensor d1 = dec1_->Forward(ConcatChannels(up_.Forward(b, tape), e1), tape);
    Tensor d0 = dec0_->Forward(ConcatChannels(up_.Forward(d1, tape), e0), tape);
    return head_->Forward(d0, tape);
  }

  void Backward(const Tensor& grad, nn::Tape& tape) {
    Tensor g_d0 = head_->Backward(grad, tape);
    Tensor g_cat0 = dec0_->Backward(g_d0, tape);
    Tensor g_up0, g_skip0;
    nn::SplitChannels(g_cat0, skip1_, g_up0, g_skip0);
    Tensor g_d1 = up_.Backward(g_up0, tape);
    Tensor g_cat1 = dec1_->Backward(g_d1, tape);
    Tensor g_up1, g_skip1;
    nn::SplitChannels(g_cat1, bottleneck_, g_up1, g_skip1);
    Tensor g_b = up_.Backward(g_up1, tape);
    Tensor g_e1 =
        pool_.Backward(enc2_->Backward(context_->Backward(g_b, tape), tape), tape);
    nn::AddInPlace(g_e1, g_skip1);
    Tensor g_e0 = pool_.Backward(enc1_->Backward(g_e1, tape), tape);
    nn::AddInPlace(g_e0, g_skip0);
    enc0_->Backward(g_e0, tape);
  }

  std::vector<nn::Parameter*> Parameters() {
    std::vector<nn::Parameter*> params;
    for (auto* layer : {enc0_.get(), enc1_.get(), enc2_.get(), context_.get(),
                        dec1_.get(), dec0_.get(), head_.get()}) {
      layer->CollectParameters(params);
    }
    return params;
  }

 private:
  std::unique_ptr<nn::Layer> enc0_, enc1_, enc2_, context_, dec1_, dec0_, head_;
  nn::MaxPool2 pool_;
  nn::Upsample2 up_;
  int skip0_ = 0, skip1_ = 0, bottleneck_ = 0;
};

SegmentationModel::SegmentationModel(SegModelConfig config,
                                     std::unique_ptr<Network> net)
    : config_(std::move(config)), net_(std::move(net)) {}
SegmentationModel::SegmentationModel(SegmentationModel&&) noexcept = default;
SegmentationModel& SegmentationModel::operator=(SegmentationModel&&) noexcept =
    default;
SegmentationModel::~SegmentationModel() = default;

absl::StatusOr<SegmentationModel> SegmentationModel::Create(
    const SegModelConfig& config, uint64_t seed) {
  RETURN_IF_ERROR(ValidateSegModelConfig(config));
  Rng rng(seed);
  return SegmentationModel(config, std::make_unique<Network>(config, rng));
}

Tensor SegmentationModel::Forward(const Tensor& image, nn::Tape* tape) const {
  return net_->Forward(image, tape);
}

void SegmentationModel::Backward(const Tensor& grad_logits, nn::Tape& tape) {
  net_->Backward(grad_logits, tape);
}

std::vector<nn::Parameter*> SegmentationModel::parameters() {
  return net_->Parameters();
}

size_t SegmentationModel::num_parameters() const {
  size_t n = 0;
  for (const auto* p : net_->Parameters()) n += p->value.size();
  return n;
}

absl::Status SegmentationModel::CheckInput(const Tensor& image) const {
  if (image.channels() != config_.in_channels ||
      image.height() != config_.height || image.width() != config_.width) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "shape mismatch: model expects %dx%dx%d, got %dx%dx%d",
        config_.in_channels, config_.height, config_.width, image.channels(),
        image.height(), image.width()));
  }
  return absl::OkStatus();
}

absl::StatusOr<Tensor> SegmentationModel::PredictProbs(const Tensor& image) const {
  RETURN_IF_ERROR(CheckInput(image));
  return LogitsToProbs(Forward(image, nullptr));
}

absl::StatusOr<double> SegmentationModel::SampleLoss(
    const ImageMaskPair& pair) const {
  RETURN_IF_ERROR(CheckInput(pair.image));
  if (pair.mask.height() != config_.height || pair.mask.width() != config_.width) {
    return absl::InvalidArgumentError("shape mismatch: mask size");
  }
  return LogitCrossEntropy(Forward(pair.image, nullptr), pair.mask, nullptr);
}

absl::Status SegmentationModel::Save(const std::filesystem::path& path) const {
  nlohmann::json header = {{"kind", "segmentation"}, {"config", ToJson(config_)}};
  return WriteCheckpoint(path, header, net_->Parameters());
}

absl::StatusOr<SegmentationModel> SegmentationModel::Load(
    const std::filesystem::path& path) {
  ASSIGN_OR_RETURN(RawCheckpoint raw, ReadCheckpoint(path));
  if (raw.header.value("kind", "") != "segmentation") {
    return absl::InvalidArgumentError("checkpoint is not a segmentation model");
  }
  ASSIGN_OR_RETURN(SegModelConfig config,
                   SegModelConfigFromJson(raw.header["config"]));
  ASSIGN_OR_RETURN(SegmentationModel model, Create(config, 0));
  RETURN_IF_ERROR(AssignParameters(model.parameters(), raw.values));
  return model;
}

// ------------------------------------------------------------- training

void Adam::Step(std::span<nn::Parameter* const> params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->value.size(), 0.0f);
      v_.emplace_back(p->value.size(), 0.0f);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float step = static_cast<float>(lr_ * std::sqrt(c2) / c1);
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  const float eps = static_cast<float>(epsilon_ * std::sqrt(c2));
  for (size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k]->value;
    const auto& grad = params[k]->grad;
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < value.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0f - b2) * grad[i] * grad[i];
      value[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
    }
  }
}

void ZeroGradients(std::span<nn::Parameter* const> params) {
  for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

absl::Status ValidateTrainConfig(const TrainConfig& config) {
  if (config.epochs < 1) return absl::InvalidArgumentError("epochs must be >= 1");
  if (config.batch_size < 1) {
    return absl::InvalidArgumentError("batch_size must be >= 1");
  }
  if (!(config.learning_rate > 0)) {
    return absl::InvalidArgumentError("learning_rate must be positive");
  }
  if (config.dp && (!(config.dp->clip_norm > 0) ||
                    config.dp->noise_multiplier < 0)) {
    return absl::InvalidArgumentError("invalid DP training options");
  }
  return absl::OkStatus();
}

std::string HistoryCsv(const TrainHistory& history) {
  std::ostringstream out;
  out << "epoch,loss,train_dice\n";
  for (size_t e = 0; e < history.loss.size(); ++e) {
    out << absl::StrFormat("%d,%.9g,%.9g\n", e + 1, history.loss[e],
                           history.train_dice[e]);
  }
  return out.str();
}

namespace {

std::vector<float> FlattenGradients(std::span<nn::Parameter* const> params) {
  std::vector<float> flat;
  for (const auto* p : params) flat.insert(flat.end(), p->grad.begin(), p->grad.end());
  return flat;
}

void UnflattenGradients(std::span<const float> flat,
                        std::span<nn::Parameter* const> params) {
  size_t offset = 0;
  for (auto* p : params) {
    std::copy(flat.begin() + offset, flat.begin() + offset + p->grad.size(),
              p->grad.begin());
    offset += p->grad.size();
  }
}

absl::Status CheckSampleShapes(std::span<const ImageMaskPair> set,
                               const SegModelConfig& config) {
  for (const auto& pair : set) {
    if (pair.image.channels() != config.in_channels ||
        pair.image.height() != config.height ||
        pair.image.width() != config.width ||
        pair.mask.height() != config.height || pair.mask.width() != config.width) {
      return absl::InvalidArgumentError(absl::StrCat(
          "shape mismatch: sample ", pair.id, " does not match model input"));
    }
  }
  return absl::OkStatus();
}

}  // namespace

absl::StatusOr<SegmentationTrainResult> TrainSegmentation(
    const SegModelConfig& config, std::span<const ImageMaskPair> train_set,
    std::span<const ImageMaskPair> test_set, const TrainConfig& tc) {
  RETURN_IF_ERROR(ValidateSegModelConfig(config));
  RETURN_IF_ERROR(ValidateTrainConfig(tc));
  if (train_set.empty() || test_set.empty()) {
    return absl::InvalidArgumentError("train and test sets must be non-empty");
  }
  RETURN_IF_ERROR(CheckSampleShapes(train_set, config));
  RETURN_IF_ERROR(CheckSampleShapes(test_set, config));

  ASSIGN_OR_RETURN(SegmentationModel model,
                   SegmentationModel::Create(config, DeriveSeed(tc.seed, 1)));
  const std::vector<nn::Parameter*> params = model.parameters();
  const size_t dimension = model.num_parameters();
  Adam adam(tc.learning_rate);
  Rng order_rng(DeriveSeed(tc.seed, 2));
  Rng noise_rng(DeriveSeed(tc.seed, 3));
  const size_t n = train_set.size();
  const double sampling_rate =
      std::min(1.0, static_cast<double>(tc.batch_size) / n);
  const int dp_steps = static_cast<int>((n + tc.batch_size - 1) / tc.batch_size);

  TrainHistory history;
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  nn::Tape tape;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    for (auto& hook : tc.hooks) hook->BeginEpoch(epoch);

    std::vector<std::vector<size_t>> batches;
    if (!tc.dp) {
      std::shuffle(order.begin(), order.end(), order_rng);
      for (size_t start = 0; start < n; start += tc.batch_size) {
        const size_t end = std::min(n, start + tc.batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
      }
    } else {
      std::bernoulli_distribution include(sampling_rate);
      for (int s = 0; s < dp_steps; ++s) {
        std::vector<size_t> batch;
        for (size_t i = 0; i < n; ++i) {
          if (include(order_rng)) batch.push_back(i);
        }
        batches.push_back(std::move(batch));
      }
    }

    double loss_sum = 0.0;
    double dice_sum = 0.0;
    size_t seen = 0;
    for (const auto& indices : batches) {
      std::vector<ImageMaskPair> batch;
      batch.reserve(indices.size());
      for (size_t i : indices) batch.push_back(train_set[i]);
      for (auto& hook : tc.hooks) RETURN_IF_ERROR(hook->TransformBatch(batch));
      for (auto& hook : tc.hooks) RETURN_IF_ERROR(hook->BeforeStep(model, batch));

      ZeroGradients(params);
      std::vector<std::vector<float>> per_sample;
      const int scale = tc.dp ? 1 : static_cast<int>(batch.size());
      for (const auto& sample : batch) {
        tape.Clear();
        const Tensor logits = model.Forward(sample.image, &tape);
        Tensor grad;
        double loss = LogitCrossEntropy(logits, sample.mask, &grad);
        if (scale > 1) {
          for (float& g : grad.values()) g /= static_cast<float>(scale);
        }
        for (auto& hook : tc.hooks) {
          loss += hook->AddLossGradient(sample, logits, scale, grad);
        }
        if (!std::isfinite(loss)) {
          return absl::AbortedError(absl::StrFormat(
              "training diverged: non-finite loss in epoch %d", epoch + 1));
        }
        loss_sum += loss;
        dice_sum += MeanForegroundDice(ProbsToLabels(LogitsToProbs(logits)),
                                       sample.mask, config.num_classes);
        ++seen;
        model.Backward(grad, tape);
        if (tc.dp) {
          per_sample.push_back(FlattenGradients(params));
          ZeroGradients(params);
        }
      }
      if (tc.dp) {
        DPConfig dp;
        dp.clip_norm = tc.dp->clip_norm;
        dp.noise_multiplier = tc.dp->noise_multiplier;
        ASSIGN_OR_RETURN(NoisedGradient noised,
                         DpSgdStep(per_sample, dimension, dp,
                                   sampling_rate * n, noise_rng));
        UnflattenGradients(noised.gradient, params);
      }
      adam.Step(params);
    }
    history.loss.push_back(seen ? loss_sum / seen : 0.0);
    history.train_dice.push_back(seen ? dice_sum / seen : 0.0);
  }
  ASSIGN_OR_RETURN(history.test_dice, MeanDice(model, test_set));
  return SegmentationTrainResult{std::move(model), std::move(history)};
}

absl::StatusOr<double> MeanDice(const SegmentationOracle& model,
                                std::span<const ImageMaskPair> set) {
  if (set.empty()) return absl::InvalidArgumentError("empty evaluation set");
  double total = 0.0;
  for (const auto& pair : set) {
    ASSIGN_OR_RETURN(Tensor probs, model.PredictProbs(pair.image));
    total += MeanForegroundDice(ProbsToLabels(probs), pair.mask,
                                model.num_classes());
  }
  return total / set.size();
}

// ---------------------------------------------------- AttackClassifier

nlohmann::json ToJson(const AttackClassifierConfig& config) {
  return {{"in_channels", config.in_channels},
          {"height", config.height},
          {"width", config.width},
          {"base_width", config.base_width}};
}

AttackClassifier::AttackClassifier(AttackClassifierConfig config,
                                   std::unique_ptr<nn::Sequential> net)
    : config_(config), net_(std::move(net)) {}
AttackClassifier::AttackClassifier(AttackClassifier&&) noexcept = default;
AttackClassifier& AttackClassifier::operator=(AttackClassifier&&) noexcept =
    default;
AttackClassifier::~AttackClassifier() = default;

absl::StatusOr<AttackClassifier> AttackClassifier::Create(
    const AttackClassifierConfig& config, uint64_t seed) {
  if (config.in_channels < 1 || config.height < 4 || config.width < 4 ||
      config.base_width < 1) {
    return absl::InvalidArgumentError("invalid attack classifier config");
  }
  Rng rng(seed);
  const int w = config.base_width;
  auto net = std::make_unique<nn::Sequential>();
  net->Emplace<nn::Conv2d>(config.in_channels, w, 3, rng)
      .Emplace<nn::ReLU>()
      .Emplace<nn::MaxPool2>()
      .Emplace<nn::Conv2d>(w, 2 * w, 3, rng)
      .Emplace<nn::ReLU>()
      .Emplace<nn::MaxPool2>()
      .Emplace<nn::Conv2d>(2 * w, 2 * w, 3, rng)
      .Emplace<nn::ReLU>()
      .Emplace<nn::GlobalAvgPool>()
      .Emplace<nn::Dense>(2 * w, 1, rng);
  return AttackClassifier(config, std::move(net));
}

double AttackClassifier::Forward(const Tensor& input, nn::Tape* tape) const {
  return net_->Forward(input, tape).at(0, 0, 0);
}

Tensor AttackClassifier::Backward(double grad_logit, nn::Tape& tape) {
  Tensor g(1, 1, 1, static_cast<float>(grad_logit));
  return net_->Backward(g, tape);
}

std::vector<nn::Parameter*> AttackClassifier::parameters() {
  std::vector<nn::Parameter*> params;
  net_->CollectParameters(params);
  return params;
}

absl::StatusOr<double> AttackClassifier::MembershipProbability(
    const Tensor& input) const {
  if (input.channels() != config_.in_channels ||
      input.height() != config_.height || input.width() != config_.width) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "shape mismatch: classifier expects %dx%dx%d, got %dx%dx%d",
        config_.in_channels, config_.height, config_.width, input.channels(),
        input.height(), input.width()));
  }
  return Sigmoid(Forward(input, nullptr));
}

absl::Status AttackClassifier::Save(const std::filesystem::path& path) const {
  nlohmann::json header = {{"kind", "attack_classifier"},
                           {"config", ToJson(config_)}};
  auto* self = const_cast<AttackClassifier*>(this);
  return WriteCheckpoint(path, header, self->parameters());
}

absl::StatusOr<AttackClassifier> AttackClassifier::Load(
    const std::filesystem::path& path) {
  ASSIGN_OR_RETURN(RawCheckpoint raw, ReadCheckpoint(path));
  if (raw.header.value("kind", "") != "attack_classifier") {
    return absl::InvalidArgumentError("checkpoint is not an attack classifier");
  }
  AttackClassifierConfig config;
  try {
    const auto& c = raw.header.at("config");
    config.in_channels = c.at("in_channels").get<int>();
    config.height = c.at("height").get<int>();
    config.width = c.at("width").get<int>();
    config.base_width = c.at("base_width").get<int>();
  } catch (const nlohmann::json::exception& e) {
    return absl::DataLossError(absl::StrCat("bad classifier config: ", e.what()));
  }
  ASSIGN_OR_RETURN(AttackClassifier model, Create(config, 0));
  RETURN_IF_ERROR(AssignParameters(model.parameters(), raw.values));
  return model;
}

absl::StatusOr<AttackClassifier> TrainAttackClassifier(
    std::span<const AttackRecord> records, const TrainConfig& tc) {
  RETURN_IF_ERROR(ValidateTrainConfig(tc));
  if (records.empty()) {
    return absl::InvalidArgumentError("empty attack training set");
  }
  const Tensor& first = records.front().input;
  for (const auto& r : records) {
    if (!r.input.SameShape(first)) {
      return absl::InvalidArgumentError(
          absl::StrCat("attack record ", r.id, " has a different shape"));
    }
    if (r.label != 0 && r.label != 1) {
      return absl::InvalidArgumentError("attack labels must be 0 or 1");
    }
  }
  AttackClassifierConfig config;
  config.in_channels = first.channels();
  config.height = first.height();
  config.width = first.width();
  ASSIGN_OR_RETURN(AttackClassifier model,
                   AttackClassifier::Create(config, DeriveSeed(tc.seed, 11)));
  const auto params = model.parameters();
  Adam adam(tc.learning_rate);
  Rng order_rng(DeriveSeed(tc.seed, 12));
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  nn::Tape tape;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (size_t start = 0; start < order.size(); start += tc.batch_size) {
      const size_t end = std::min(order.size(), start + tc.batch_size);
      ZeroGradients(params);
      for (size_t k = start; k < end; ++k) {
        const AttackRecord& r = records[order[k]];
        tape.Clear();
        const double z = model.Forward(r.input, &tape);
        if (!std::isfinite(z)) {
          return absl::AbortedError("attack classifier training diverged");
        }
        model.Backward((Sigmoid(z) - r.label) / (end - start), tape);
      }
      adam.Step(params);
    }
  }
  return model;
}

// --------------------------------------------------------------- presets

TrainConfig PublishedSegmentationTrainConfig() {
  TrainConfig tc;
  tc.epochs = 70;
  tc.batch_size = 8;
  tc.learning_rate = 1e-4;
  return tc;
}

TrainConfig PublishedCropTrainingConfig() {
  TrainConfig tc = PublishedSegmentationTrainConfig();
  tc.epochs = 210;
  return tc;
}

TrainConfig PublishedBinaryAttackTrainConfig() {
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 4;
  tc.learning_rate = 1e-4;
  return tc;
}

TrainConfig PublishedMultiClassAttackTrainConfig() {
  TrainConfig tc = PublishedBinaryAttackTrainConfig();
  tc.epochs = 10;
  return tc;
}

}  // namespace segpriv
