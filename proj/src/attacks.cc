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

#include "segpriv/attacks.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "nlohmann/json.hpp"
#include "segpriv/random.h"
#include "segpriv/status_macros.h"

namespace segpriv {
namespace {

constexpr char kTensorMagic[8] = {'S', 'E', 'G', 'P', 'R', 'I', 'V', 'T'};

Dataset SampleWithoutReplacement(std::span<const ImageMaskPair> set, size_t k,
                                 Rng& rng) {
  std::vector<size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.reserve(k);
  for (size_t i : idx) out.push_back(set[i]);
  return out;
}

absl::StatusOr<AttackRecord> MakeRecord(const SegmentationOracle& model,
                                        const ImageMaskPair& pair,
                                        AttackType type, int label) {
  ASSIGN_OR_RETURN(Tensor probs, model.PredictProbs(pair.image));
  if (type == AttackType::kTypeI) {
    return BuildType1Record(pair.id, probs, label);
  }
  return BuildType2Record(pair.id, probs, pair.mask, model.num_classes(), label);
}

}  // namespace

std::string_view AttackTypeName(AttackType type) {
  switch (type) {
    case AttackType::kTypeI:
      return "type1";
    case AttackType::kTypeII:
      return "type2";
    case AttackType::kGlobalLoss:
      return "global_loss";
  }
  return "unknown";
}

absl::StatusOr<AttackType> ParseAttackType(std::string_view name) {
  if (name == "type1") return AttackType::kTypeI;
  if (name == "type2") return AttackType::kTypeII;
  if (name == "global_loss") return AttackType::kGlobalLoss;
  return absl::InvalidArgumentError(absl::StrCat("unknown attack type: ", std::string(name)));
}

absl::StatusOr<std::string> ResolveShadowEncoder(const ShadowSetting& setting,
                                                 const std::string& victim_encoder) {
  if (setting.mode == ShadowMode::kModelDependent) return victim_encoder;
  const auto& known = RegisteredEncoders();
  if (std::find(known.begin(), known.end(), setting.shadow_encoder_id) ==
      known.end()) {
    return absl::InvalidArgumentError(
        absl::StrCat("unknown shadow encoder: ", setting.shadow_encoder_id));
  }
  return setting.shadow_encoder_id;
}

Tensor EncodeGroundTruth(const LabelMask& mask, int num_classes) {
  const int channels = OutputChannels(num_classes);
  Tensor out(channels, mask.height(), mask.width());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      const int label = mask.at(y, x);
      if (channels == 1) {
        out.at(0, y, x) = label != 0 ? 1.0f : 0.0f;
      } else if (label < channels) {
        out.at(label, y, x) = 1.0f;
      }
    }
  }
  return out;
}

AttackRecord BuildType1Record(std::string id, const Tensor& prediction,
                              int label) {
  return AttackRecord{std::move(id), prediction, label};
}

absl::StatusOr<AttackRecord> BuildType2Record(std::string id,
                                              const Tensor& prediction,
                                              const LabelMask& ground_truth,
                                              int num_classes, int label) {
  if (prediction.height() != ground_truth.height() ||
      prediction.width() != ground_truth.width()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "spatial mismatch: prediction %dx%d, mask %dx%d", prediction.height(),
        prediction.width(), ground_truth.height(), ground_truth.width()));
  }
  return AttackRecord{
      std::move(id),
      ConcatChannels(prediction, EncodeGroundTruth(ground_truth, num_classes)),
      label};
}

BalancedSets Balance(std::span<const ImageMaskPair> members,
                     std::span<const ImageMaskPair> nonmembers, uint64_t seed) {
  Rng rng(seed);
  const size_t k = std::min(members.size(), nonmembers.size());
  BalancedSets out;
  out.members = members.size() == k
                    ? Dataset(members.begin(), members.end())
                    : SampleWithoutReplacement(members, k, rng);
  out.nonmembers = nonmembers.size() == k
                       ? Dataset(nonmembers.begin(), nonmembers.end())
                       : SampleWithoutReplacement(nonmembers, k, rng);
  return out;
}

absl::StatusOr<std::vector<AttackRecord>> AssembleAttackDataset(
    const SegmentationOracle& shadow, std::span<const ImageMaskPair> shadow_train,
    std::span<const ImageMaskPair> shadow_test, AttackType type, bool balance,
    uint64_t seed) {
  if (shadow_train.empty() || shadow_test.empty()) {
    return absl::InvalidArgumentError("shadow train and test sets must be non-empty");
  }
  if (type == AttackType::kGlobalLoss) {
    return absl::InvalidArgumentError(
        "the loss attack has no attack dataset; use CalibrateLossThreshold");
  }
  Dataset members(shadow_train.begin(), shadow_train.end());
  Dataset nonmembers(shadow_test.begin(), shadow_test.end());
  if (balance) {
    BalancedSets b = Balance(shadow_train, shadow_test, seed);
    members = std::move(b.members);
    nonmembers = std::move(b.nonmembers);
  }
  std::vector<AttackRecord> records;
  records.reserve(members.size() + nonmembers.size());
  for (const auto& pair : members) {
    ASSIGN_OR_RETURN(AttackRecord r, MakeRecord(shadow, pair, type, 1));
    records.push_back(std::move(r));
  }
  for (const auto& pair : nonmembers) {
    ASSIGN_OR_RETURN(AttackRecord r, MakeRecord(shadow, pair, type, 0));
    records.push_back(std::move(r));
  }
  return records;
}

absl::StatusOr<LossThreshold> CalibrateLossThreshold(
    const SegmentationOracle& shadow, std::span<const ImageMaskPair> shadow_train) {
  if (shadow_train.empty()) {
    return absl::InvalidArgumentError("empty shadow training set");
  }
  double total = 0.0;
  for (const auto& pair : shadow_train) {
    ASSIGN_OR_RETURN(double loss, shadow.SampleLoss(pair));
    total += loss;
  }
  return LossThreshold{total / shadow_train.size()};
}

absl::StatusOr<AttackResult> RunAttack(const SegmentationOracle& victim,
                                       const AttackModel& attack_model,
                                       std::span<const ImageMaskPair> members,
                                       std::span<const ImageMaskPair> nonmembers,
                                       AttackType type) {
  if (members.empty() || nonmembers.empty()) {
    return absl::InvalidArgumentError("evaluation needs members and non-members");
  }
  const bool loss_attack = type == AttackType::kGlobalLoss;
  if (loss_attack != std::holds_alternative<LossThreshold>(attack_model)) {
    return absl::InvalidArgumentError(absl::StrCat(
        "attack model does not match attack type ",
        std::string(AttackTypeName(type))));
  }
  const AttackClassifier* classifier =
      loss_attack ? nullptr : std::get<const AttackClassifier*>(attack_model);
  if (!loss_attack && classifier == nullptr) {
    return absl::InvalidArgumentError("null attack classifier");
  }

  AttackResult result;
  result.type = type;
  auto score_one = [&](const ImageMaskPair& pair, int label) -> absl::Status {
    ScoredSample s;
    s.id = pair.id;
    s.label = label;
    if (loss_attack) {
      ASSIGN_OR_RETURN(double loss, victim.SampleLoss(pair));
      s.decision = InferMembershipFromLoss(loss, std::get<LossThreshold>(attack_model));
      s.score = s.decision;
      s.roc_score = -loss;
    } else {
      ASSIGN_OR_RETURN(AttackRecord r, MakeRecord(victim, pair, type, label));
      const auto& cfg = classifier->config();
      if (r.input.channels() != cfg.in_channels ||
          r.input.height() != cfg.height || r.input.width() != cfg.width) {
        return absl::InvalidArgumentError(absl::StrFormat(
            "shape mismatch: record %dx%dx%d, classifier expects %dx%dx%d",
            r.input.channels(), r.input.height(), r.input.width(),
            cfg.in_channels, cfg.height, cfg.width));
      }
      ASSIGN_OR_RETURN(s.score, classifier->MembershipProbability(r.input));
      s.roc_score = s.score;
      s.decision = s.score >= 0.5 ? 1 : 0;
    }
    result.samples.push_back(std::move(s));
    return absl::OkStatus();
  };
  for (const auto& pair : members) RETURN_IF_ERROR(score_one(pair, 1));
  for (const auto& pair : nonmembers) RETURN_IF_ERROR(score_one(pair, 0));

  std::vector<int> decisions, labels;
  std::vector<double> scores;
  for (const auto& s : result.samples) {
    decisions.push_back(s.decision);
    labels.push_back(s.label);
    scores.push_back(s.roc_score);
  }
  ASSIGN_OR_RETURN(result.report, BuildMetricsReport(decisions, scores, labels));
  return result;
}

std::string ScoresCsv(const AttackResult& result) {
  std::ostringstream out;
  out << "id,score,label\n";
  for (const auto& s : result.samples) {
    out << absl::StrFormat("%s,%.9g,%d\n", s.id, s.score, s.label);
  }
  return out.str();
}

absl::Status WriteTensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) return absl::InternalError(absl::StrCat("cannot write ", path.string()));
  out.write(kTensorMagic, sizeof(kTensorMagic));
  const int32_t dims[3] = {t.channels(), t.height(), t.width()};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(t.values().data()),
            t.size() * sizeof(float));
  if (!out) return absl::InternalError(absl::StrCat("short write to ", path.string()));
  return absl::OkStatus();
}

absl::StatusOr<Tensor> ReadTensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path.string()));
  char magic[sizeof(kTensorMagic)];
  int32_t dims[3];
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
    return absl::DataLossError(absl::StrCat("not a tensor file: ", path.string()));
  }
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0 ||
      static_cast<int64_t>(dims[0]) * dims[1] * dims[2] > (int64_t{1} << 30)) {
    return absl::DataLossError(absl::StrCat("bad tensor dims in ", path.string()));
  }
  Tensor t(dims[0], dims[1], dims[2]);
  in.read(reinterpret_cast<char*>(t.values().data()), t.size() * sizeof(float));
  if (!in) return absl::DataLossError(absl::StrCat("truncated ", path.string()));
  return t;
}

absl::Status WriteAttackDataset(const std::filesystem::path& dir,
                                std::span<const AttackRecord> records) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) return absl::InternalError(absl::StrCat("mkdir ", dir.string(), ": ", ec.message()));
  nlohmann::json manifest = nlohmann::json::array();
  for (size_t i = 0; i < records.size(); ++i) {
    const std::string file = absl::StrFormat("%06d.tensor", i);
    RETURN_IF_ERROR(WriteTensor(dir / file, records[i].input));
    manifest.push_back({{"id", records[i].id},
                        {"label", records[i].label},
                        {"source", records[i].label ? "shadow_train" : "shadow_test"},
                        {"file", file}});
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) return absl::InternalError("cannot write attack dataset manifest");
  return absl::OkStatus();
}

absl::StatusOr<std::vector<AttackRecord>> ReadAttackDataset(
    const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) return absl::NotFoundError(absl::StrCat("no manifest in ", dir.string()));
  const nlohmann::json manifest = nlohmann::json::parse(in, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_array()) {
    return absl::DataLossError("malformed attack dataset manifest");
  }
  std::vector<AttackRecord> records;
  for (const auto& entry : manifest) {
    if (!entry.contains("id") || !entry.contains("label") || !entry.contains("file")) {
      return absl::DataLossError("attack manifest entry missing fields");
    }
    AttackRecord r;
    r.id = entry["id"].get<std::string>();
    r.label = entry["label"].get<int>();
    ASSIGN_OR_RETURN(r.input, ReadTensor(dir / entry["file"].get<std::string>()));
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace segpriv
