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

#include <algorithm>
#include <chrono>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "absl/strings/str_join.h"
#include "absl/strings/str_replace.h"
#include "absl/strings/str_split.h"
#include "segpriv/metrics.h"
#include "segpriv/random.h"
#include "segpriv/status_macros.h"

namespace segpriv {
namespace fs = std::filesystem;
namespace {

// Seed streams derived from the master seed.
constexpr uint64_t kSplitStream = 101;
constexpr uint64_t kVictimStream = 102;
constexpr uint64_t kShadowStream = 103;
constexpr uint64_t kDefenceStream = 105;
constexpr uint64_t kPoisonStream = 106;
constexpr uint64_t kEvalBalanceStream = 107;
constexpr uint64_t kAttackBalanceStream = 108;
constexpr uint64_t kAttackTrainStream = 110;

constexpr AttackType kAllAttacks[] = {AttackType::kGlobalLoss, AttackType::kTypeI,
                                      AttackType::kTypeII};

absl::Status WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) return absl::InternalError(absl::StrCat("cannot write ", path.string()));
  return absl::OkStatus();
}

absl::Status WriteJson(const fs::path& path, const nlohmann::json& j) {
  return WriteText(path, j.dump(2) + "\n");
}

absl::StatusOr<std::string> ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError(absl::StrCat("missing artefact: ", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string Str(std::string_view s) { return std::string(s); }

std::string FormatDouble(double v) { return absl::StrFormat("%.17g", v); }

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since)
      .count();
}

absl::StatusOr<Dataset> LoadDataset(const ExperimentConfig& cfg) {
  Dataset dataset;
  if (cfg.dataset_kind == "synthetic") {
    ASSIGN_OR_RETURN(dataset,
                     GenerateSyntheticDataset(cfg.synthetic, cfg.splits.total()));
  } else {
    ASSIGN_OR_RETURN(dataset,
                     LoadDirectoryDataset(cfg.dataset_path, cfg.model.num_classes));
  }
  for (auto& pair : dataset) {
    if (pair.image.height() != cfg.model.height ||
        pair.image.width() != cfg.model.width) {
      pair = ResizePair(pair, cfg.model.height, cfg.model.width);
    }
    if (pair.image.channels() != cfg.model.in_channels) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "sample %s has %d channels, model expects %d", pair.id,
          pair.image.channels(), cfg.model.in_channels));
    }
    RETURN_IF_ERROR(ValidatePair(pair, cfg.model.num_classes));
  }
  return dataset;
}

std::set<std::string> Ids(std::span<const ImageMaskPair> set) {
  std::set<std::string> ids;
  for (const auto& p : set) ids.insert(p.id);
  return ids;
}

struct Victim {
  std::unique_ptr<SegmentationModel> model;
  std::unique_ptr<SegmentationOracle> argmax_view;
  TrainHistory history;
  nlohmann::json defence;

  const SegmentationOracle& oracle() const {
    return argmax_view ? *argmax_view : static_cast<const SegmentationOracle&>(*model);
  }
};

absl::StatusOr<Victim> TrainVictim(const ExperimentConfig& cfg,
                                   const DatasetSplits& splits,
                                   const fs::path& dir) {
  const DefenceSpec& d = cfg.defence;
  TrainConfig tc = cfg.train;
  tc.hooks.clear();
  tc.dp.reset();
  tc.seed = DeriveSeed(cfg.seed, kVictimStream);
  std::shared_ptr<PoisoningHook> poison;
  if (cfg.trigger) {
    poison = std::make_shared<PoisoningHook>(*cfg.trigger,
                                             DeriveSeed(cfg.seed, kPoisonStream));
    tc.hooks.push_back(poison);
  }
  const uint64_t defence_seed = DeriveSeed(cfg.seed, kDefenceStream);

  Victim victim;
  victim.defence = {{"name", DefenceName(d.kind)}};
  switch (d.kind) {
    case DefenceKind::kNone:
    case DefenceKind::kArgmax:
      break;
    case DefenceKind::kCrop: {
      tc.epochs = d.crop_epochs > 0 ? d.crop_epochs : 3 * cfg.train.epochs;
      auto hook = std::make_shared<RandomCropHook>(d.crop_height, d.crop_width,
                                                   defence_seed);
      victim.defence["params"] = hook->Describe();
      victim.defence["params"]["epochs"] = tc.epochs;
      tc.hooks.push_back(hook);
      break;
    }
    case DefenceKind::kMixup: {
      auto hook = std::make_shared<MixupHook>(d.mixup, defence_seed);
      victim.defence["params"] = hook->Describe();
      tc.hooks.push_back(hook);
      break;
    }
    case DefenceKind::kMinMax: {
      ASSIGN_OR_RETURN(auto hook, MinMaxHook::Create(d.minmax, cfg.model,
                                                     splits.reference, defence_seed));
      victim.defence["params"] = hook->Describe();
      tc.hooks.push_back(hook);
      break;
    }
    case DefenceKind::kDp: {
      ASSIGN_OR_RETURN(DpTrainResult r, DpTrain(cfg.model, splits.victim_train,
                                                splits.victim_test, d.dp, tc));
      victim.defence["params"] = ToJson(d.dp, r);
      victim.model = std::make_unique<SegmentationModel>(std::move(r.model));
      victim.history = std::move(r.history);
      break;
    }
    case DefenceKind::kKd: {
      ASSIGN_OR_RETURN(KdResult r, KdProtect(cfg.model, splits.victim_train,
                                             splits.reference, splits.victim_test, tc));
      victim.defence["params"] = {{"validation_loss", r.validation_loss},
                                  {"filter_threshold", r.validation_loss},
                                  {"validation_set", "victim_test"},
                                  {"reference_size", splits.reference.size()},
                                  {"selected", r.selected_ids.size()},
                                  {"selected_ids", r.selected_ids}};
      RETURN_IF_ERROR(r.teacher.Save(dir / "teacher.ckpt"));
      RETURN_IF_ERROR(WriteText(dir / "teacher_history.csv", HistoryCsv(r.teacher_history)));
      victim.model = std::make_unique<SegmentationModel>(std::move(r.model));
      victim.history = std::move(r.history);
      break;
    }
  }
  if (!victim.model) {
    ASSIGN_OR_RETURN(SegmentationTrainResult r,
                     TrainSegmentation(cfg.model, splits.victim_train,
                                       splits.victim_test, tc));
    victim.model = std::make_unique<SegmentationModel>(std::move(r.model));
    victim.history = std::move(r.history);
  }
  if (d.kind == DefenceKind::kArgmax) {
    victim.argmax_view = std::make_unique<ArgmaxDefendedModel>(*victim.model);
  }
  if (poison) RETURN_IF_ERROR(WriteJson(dir / "poisoning.json", poison->Manifest()));
  RETURN_IF_ERROR(victim.model->Save(dir / "victim.ckpt"));
  RETURN_IF_ERROR(WriteText(dir / "victim_history.csv", HistoryCsv(victim.history)));
  return victim;
}

absl::StatusOr<SegmentationModel> ObtainShadow(const ExperimentConfig& cfg,
                                               const DatasetSplits& splits,
                                               const fs::path& dir,
                                               nlohmann::json& manifest,
                                               HygieneReport& hygiene) {
  ASSIGN_OR_RETURN(std::string encoder,
                   ResolveShadowEncoder(cfg.shadow, cfg.model.encoder_id));
  SegModelConfig shadow_config = cfg.model;
  shadow_config.encoder_id = encoder;
  if (!cfg.shadow_checkpoint.empty()) {
    ASSIGN_OR_RETURN(SegmentationModel shadow,
                     SegmentationModel::Load(cfg.shadow_checkpoint));
    const SegModelConfig& c = shadow.config();
    if (c.height != cfg.model.height || c.width != cfg.model.width ||
        c.in_channels != cfg.model.in_channels ||
        c.num_classes != cfg.model.num_classes) {
      return absl::InvalidArgumentError("shadow checkpoint does not match the task");
    }
    manifest["shadow"] = {{"source", cfg.shadow_checkpoint.string()},
                          {"encoder", c.encoder_id}};
    // The checkpoint must have been trained on this run's shadow subsets.
    const fs::path their_splits = cfg.shadow_checkpoint.parent_path() / "splits.json";
    ++hygiene.checks;
    auto text = ReadText(their_splits);
    if (!text.ok()) {
      hygiene.violations.push_back(
          "shadow checkpoint has no splits.json; its training data is unverifiable");
    } else {
      const auto theirs = nlohmann::json::parse(*text, nullptr, false);
      std::vector<std::string> train_ids, test_ids;
      for (const auto& p : splits.shadow_train) train_ids.push_back(p.id);
      for (const auto& p : splits.shadow_test) test_ids.push_back(p.id);
      if (theirs.is_discarded() || theirs.value("shadow_train", nlohmann::json()) != train_ids ||
          theirs.value("shadow_test", nlohmann::json()) != test_ids) {
        hygiene.violations.push_back(
            "shadow checkpoint was trained on different shadow subsets");
      }
    }
    RETURN_IF_ERROR(shadow.Save(dir / "shadow.ckpt"));
    return shadow;
  }
  TrainConfig tc = cfg.train;
  tc.hooks.clear();
  tc.dp.reset();
  tc.seed = DeriveSeed(cfg.seed, kShadowStream);
  ASSIGN_OR_RETURN(SegmentationTrainResult r,
                   TrainSegmentation(shadow_config, splits.shadow_train,
                                     splits.shadow_test, tc));
  manifest["shadow"] = {{"source", "trained"},
                        {"encoder", encoder},
                        {"mode", cfg.shadow.mode == ShadowMode::kModelDependent
                                     ? "model-dependent"
                                     : "model-agnostic"},
                        {"test_dice", r.history.test_dice}};
  RETURN_IF_ERROR(r.model.Save(dir / "shadow.ckpt"));
  RETURN_IF_ERROR(WriteText(dir / "shadow_history.csv", HistoryCsv(r.history)));
  return std::move(r.model);
}

// Evaluation members must come from victim_train, non-members from
// victim_test, none may be in the attack-training data and every image must
// be bit-identical to the pristine loaded copy.
void CheckEvaluationSets(const BalancedSets& eval, const DatasetSplits& splits,
                         const std::set<std::string>& attack_training_ids,
                         const std::map<std::string, uint64_t>& pristine,
                         HygieneReport& hygiene) {
  const auto train_ids = Ids(splits.victim_train);
  const auto test_ids = Ids(splits.victim_test);
  auto check = [&](const Dataset& set, const std::set<std::string>& home,
                   std::string_view role) {
    for (const auto& p : set) {
      hygiene.checks += 3;
      if (!home.contains(p.id)) {
        hygiene.violations.push_back(
            absl::StrCat("evaluation ", Str(role), " ", p.id, " not from its victim subset"));
      }
      if (attack_training_ids.contains(p.id)) {
        hygiene.violations.push_back(
            absl::StrCat("evaluation sample ", p.id, " was used for attack training"));
      }
      auto it = pristine.find(p.id);
      if (it == pristine.end() || it->second != Fingerprint(p.image)) {
        hygiene.violations.push_back(
            absl::StrCat("evaluation input ", p.id, " differs from its pristine checksum"));
      }
    }
  };
  check(eval.members, train_ids, "member");
  check(eval.nonmembers, test_ids, "non-member");
}

absl::Status RunInto(const ExperimentConfig& cfg, const fs::path& dir,
                     RunResult& result, nlohmann::json& manifest) {
  const auto start = std::chrono::steady_clock::now();
  nlohmann::json timings;

  ASSIGN_OR_RETURN(Dataset dataset, LoadDataset(cfg));
  std::map<std::string, uint64_t> pristine;
  for (const auto& p : dataset) pristine[p.id] = Fingerprint(p.image);

  ASSIGN_OR_RETURN(DatasetSplits splits,
                   MakeSplits(dataset, cfg.splits, DeriveSeed(cfg.seed, kSplitStream)));
  HygieneReport& hygiene = result.hygiene;
  ++hygiene.checks;
  if (absl::Status s = CheckSplitsDisjoint(splits); !s.ok()) {
    hygiene.violations.push_back(std::string(s.message()));
  }
  RETURN_IF_ERROR(WriteJson(dir / "splits.json",
                            SplitManifest(splits, DeriveSeed(cfg.seed, kSplitStream))));

  auto phase = std::chrono::steady_clock::now();
  ASSIGN_OR_RETURN(Victim victim, TrainVictim(cfg, splits, dir));
  timings["victim_seconds"] = Seconds(phase);
  manifest["defence"] = victim.defence;
  const SegmentationOracle& oracle = victim.oracle();

  ASSIGN_OR_RETURN(result.train_dice, MeanDice(oracle, splits.victim_train));
  ASSIGN_OR_RETURN(result.test_dice, MeanDice(oracle, splits.victim_test));
  result.gap = result.train_dice - result.test_dice;
  nlohmann::json report = {{"utility",
                            {{"train_dice", result.train_dice},
                             {"test_dice", result.test_dice},
                             {"generalisation_gap", result.gap}}}};

  if (cfg.trigger) {
    ASSIGN_OR_RETURN(BackdoorReport b,
                     BackdoorSuccess(oracle, splits.victim_test, *cfg.trigger));
    result.backdoor = b;
    report["backdoor"] = ToJson(*cfg.trigger, b);
    RETURN_IF_ERROR(WriteJson(dir / "backdoor.json", report["backdoor"]));
  }

  if (!cfg.attacks.empty()) {
    phase = std::chrono::steady_clock::now();
    ASSIGN_OR_RETURN(SegmentationModel shadow,
                     ObtainShadow(cfg, splits, dir, manifest, hygiene));
    timings["shadow_seconds"] = Seconds(phase);
    // The attacker mirrors the victim's release format.
    std::unique_ptr<SegmentationOracle> shadow_view;
    if (cfg.defence.kind == DefenceKind::kArgmax) {
      shadow_view = std::make_unique<ArgmaxDefendedModel>(shadow);
    }
    const SegmentationOracle& shadow_oracle =
        shadow_view ? *shadow_view : static_cast<const SegmentationOracle&>(shadow);

    const BalancedSets eval = Balance(splits.victim_train, splits.victim_test,
                                      DeriveSeed(cfg.seed, kEvalBalanceStream));
    manifest["evaluation"] = {{"members", eval.members.size()},
                              {"nonmembers", eval.nonmembers.size()}};
    std::set<std::string> attack_training_ids = Ids(splits.shadow_train);
    for (const auto& id : Ids(splits.shadow_test)) attack_training_ids.insert(id);

    nlohmann::json attack_reports = nlohmann::json::object();
    for (AttackType type : cfg.attacks) {
      phase = std::chrono::steady_clock::now();
      const std::string name(AttackTypeName(type));
      AttackResult attack;
      if (type == AttackType::kGlobalLoss) {
        ASSIGN_OR_RETURN(LossThreshold tau,
                         CalibrateLossThreshold(shadow_oracle, splits.shadow_train));
        manifest["loss_threshold"] = tau.tau;
        CheckEvaluationSets(eval, splits, attack_training_ids, pristine, hygiene);
        ASSIGN_OR_RETURN(attack, RunAttack(oracle, tau, eval.members,
                                           eval.nonmembers, type));
      } else {
        ASSIGN_OR_RETURN(std::vector<AttackRecord> records,
                         AssembleAttackDataset(shadow_oracle, splits.shadow_train,
                                               splits.shadow_test, type, true,
                                               DeriveSeed(cfg.seed, kAttackBalanceStream)));
        std::set<std::string> record_ids = attack_training_ids;
        for (const auto& r : records) record_ids.insert(r.id);
        if (cfg.save_attack_datasets) {
          RETURN_IF_ERROR(WriteAttackDataset(dir / ("attack_data_" + name), records));
        }
        TrainConfig atc = cfg.attack_train;
        atc.hooks.clear();
        atc.dp.reset();
        atc.seed = DeriveSeed(cfg.seed, kAttackTrainStream + static_cast<int>(type));
        ASSIGN_OR_RETURN(AttackClassifier classifier, TrainAttackClassifier(records, atc));
        RETURN_IF_ERROR(classifier.Save(dir / ("attack_" + name + ".ckpt")));
        CheckEvaluationSets(eval, splits, record_ids, pristine, hygiene);
        ASSIGN_OR_RETURN(attack, RunAttack(oracle, &classifier, eval.members,
                                           eval.nonmembers, type));
      }
      timings[name + "_seconds"] = Seconds(phase);
      RETURN_IF_ERROR(WriteText(dir / ("scores_" + name + ".csv"), ScoresCsv(attack)));
      RETURN_IF_ERROR(WriteText(dir / ("roc_" + name + ".csv"), RocCsv(attack.report.roc)));
      attack_reports[name] = ToJson(attack.report);
      result.attacks[type] = std::move(attack);
    }
    report["attacks"] = attack_reports;
  }
  report["hygiene"] = ToJson(hygiene);
  RETURN_IF_ERROR(WriteJson(dir / "report.json", report));

  timings["total_seconds"] = Seconds(start);
  manifest["timings"] = timings;
  manifest["hygiene"] = ToJson(hygiene);
  manifest["status"] = hygiene.ok() ? "complete" : "hygiene_failed";
  return absl::OkStatus();
}

std::string CsvField(std::string s) {
  return absl::StrReplaceAll(s, {{",", ";"}, {"\n", " "}, {"\r", " "}});
}

}  // namespace

// ------------------------------------------------------------- defences

std::string_view DefenceName(DefenceKind kind) {
  switch (kind) {
    case DefenceKind::kNone:
      return "none";
    case DefenceKind::kArgmax:
      return "argmax";
    case DefenceKind::kCrop:
      return "crop";
    case DefenceKind::kMixup:
      return "mixup";
    case DefenceKind::kMinMax:
      return "minmax";
    case DefenceKind::kDp:
      return "dp";
    case DefenceKind::kKd:
      return "kd";
  }
  return "unknown";
}

absl::StatusOr<DefenceKind> ParseDefence(std::string_view name) {
  for (DefenceKind kind :
       {DefenceKind::kNone, DefenceKind::kArgmax, DefenceKind::kCrop,
        DefenceKind::kMixup, DefenceKind::kMinMax, DefenceKind::kDp,
        DefenceKind::kKd}) {
    if (DefenceName(kind) == name) return kind;
  }
  return absl::InvalidArgumentError(absl::StrCat("unknown defence: ", Str(name)));
}

// --------------------------------------------------------------- config

ExperimentConfig DefaultExperimentConfig() {
  ExperimentConfig cfg;
  cfg.train.epochs = 60;
  cfg.train.batch_size = 8;
  cfg.train.learning_rate = 1e-3;
  cfg.attack_train.epochs = 30;
  cfg.attack_train.batch_size = 4;
  cfg.attack_train.learning_rate = 1e-3;
  return cfg;
}

absl::StatusOr<ExperimentConfig> ExperimentConfigFromKv(const KeyValueConfig& kv) {
  ExperimentConfig cfg = DefaultExperimentConfig();
  ASSIGN_OR_RETURN(int seed, kv.GetInt("seed", 0));
  if (seed < 0) return absl::InvalidArgumentError("seed must be non-negative");
  cfg.seed = static_cast<uint64_t>(seed);

  cfg.dataset_kind = kv.GetString("dataset.kind", "synthetic");
  cfg.dataset_path = kv.GetString("dataset.path", "");
  if (cfg.dataset_kind != "synthetic" && cfg.dataset_kind != "directory") {
    return absl::InvalidArgumentError(
        absl::StrCat("unknown dataset kind: ", cfg.dataset_kind));
  }
  if (cfg.dataset_kind == "directory" && cfg.dataset_path.empty()) {
    return absl::InvalidArgumentError("dataset.path is required for directory data");
  }

  SyntheticTaskSpec& syn = cfg.synthetic;
  ASSIGN_OR_RETURN(syn.height, kv.GetInt("synthetic.height", syn.height));
  ASSIGN_OR_RETURN(syn.width, kv.GetInt("synthetic.width", syn.width));
  ASSIGN_OR_RETURN(syn.channels, kv.GetInt("synthetic.channels", syn.channels));
  ASSIGN_OR_RETURN(syn.num_classes, kv.GetInt("synthetic.num_classes", syn.num_classes));
  ASSIGN_OR_RETURN(syn.min_shapes, kv.GetInt("synthetic.min_shapes", syn.min_shapes));
  ASSIGN_OR_RETURN(syn.max_shapes, kv.GetInt("synthetic.max_shapes", syn.max_shapes));
  ASSIGN_OR_RETURN(syn.noise_level, kv.GetDouble("synthetic.noise_level", syn.noise_level));
  ASSIGN_OR_RETURN(syn.min_contrast, kv.GetDouble("synthetic.min_contrast", syn.min_contrast));
  ASSIGN_OR_RETURN(syn.max_contrast, kv.GetDouble("synthetic.max_contrast", syn.max_contrast));
  ASSIGN_OR_RETURN(syn.distractors, kv.GetInt("synthetic.distractors", syn.distractors));
  ASSIGN_OR_RETURN(int data_seed, kv.GetInt("synthetic.seed", seed));
  syn.seed = static_cast<uint64_t>(data_seed);
  if (cfg.dataset_kind == "synthetic") RETURN_IF_ERROR(ValidateSyntheticSpec(syn));

  SplitSizes& sp = cfg.splits;
  ASSIGN_OR_RETURN(sp.victim_train, kv.GetInt("splits.victim_train", sp.victim_train));
  ASSIGN_OR_RETURN(sp.victim_test, kv.GetInt("splits.victim_test", sp.victim_test));
  ASSIGN_OR_RETURN(sp.shadow_train, kv.GetInt("splits.shadow_train", sp.shadow_train));
  ASSIGN_OR_RETURN(sp.shadow_test, kv.GetInt("splits.shadow_test", sp.shadow_test));
  ASSIGN_OR_RETURN(sp.reference, kv.GetInt("splits.reference", sp.reference));
  if (sp.victim_train < 1 || sp.victim_test < 1 || sp.shadow_train < 0 ||
      sp.shadow_test < 0 || sp.reference < 0) {
    return absl::InvalidArgumentError("invalid split sizes");
  }

  SegModelConfig& m = cfg.model;
  m.encoder_id = kv.GetString("model.encoder", m.encoder_id);
  ASSIGN_OR_RETURN(m.base_width, kv.GetInt("model.base_width", m.base_width));
  const bool synthetic = cfg.dataset_kind == "synthetic";
  ASSIGN_OR_RETURN(m.height, kv.GetInt("model.height", synthetic ? syn.height : m.height));
  ASSIGN_OR_RETURN(m.width, kv.GetInt("model.width", synthetic ? syn.width : m.width));
  ASSIGN_OR_RETURN(m.in_channels, kv.GetInt("model.in_channels",
                                            synthetic ? syn.channels : m.in_channels));
  ASSIGN_OR_RETURN(m.num_classes, kv.GetInt("model.num_classes",
                                            synthetic ? syn.num_classes : m.num_classes));
  RETURN_IF_ERROR(ValidateSegModelConfig(m));

  ASSIGN_OR_RETURN(cfg.train.epochs, kv.GetInt("train.epochs", cfg.train.epochs));
  ASSIGN_OR_RETURN(cfg.train.batch_size, kv.GetInt("train.batch_size", cfg.train.batch_size));
  ASSIGN_OR_RETURN(cfg.train.learning_rate,
                   kv.GetDouble("train.learning_rate", cfg.train.learning_rate));
  RETURN_IF_ERROR(ValidateTrainConfig(cfg.train));
  ASSIGN_OR_RETURN(cfg.attack_train.epochs, kv.GetInt("attack.epochs", cfg.attack_train.epochs));
  ASSIGN_OR_RETURN(cfg.attack_train.batch_size,
                   kv.GetInt("attack.batch_size", cfg.attack_train.batch_size));
  ASSIGN_OR_RETURN(cfg.attack_train.learning_rate,
                   kv.GetDouble("attack.learning_rate", cfg.attack_train.learning_rate));
  RETURN_IF_ERROR(ValidateTrainConfig(cfg.attack_train));

  const std::string shadow_mode = kv.GetString("shadow.mode", "model-dependent");
  if (shadow_mode == "model-dependent") {
    cfg.shadow.mode = ShadowMode::kModelDependent;
  } else if (shadow_mode == "model-agnostic") {
    cfg.shadow.mode = ShadowMode::kModelAgnostic;
  } else {
    return absl::InvalidArgumentError(absl::StrCat("unknown shadow mode: ", shadow_mode));
  }
  cfg.shadow.shadow_encoder_id = kv.GetString("shadow.encoder", m.encoder_id);
  RETURN_IF_ERROR(ResolveShadowEncoder(cfg.shadow, m.encoder_id).status());
  cfg.shadow_checkpoint = kv.GetString("shadow.checkpoint", "");

  cfg.attacks.clear();
  for (const std::string& name :
       kv.GetList("attacks", {"global_loss", "type1", "type2"})) {
    if (name == "none") continue;
    ASSIGN_OR_RETURN(AttackType type, ParseAttackType(name));
    if (std::find(cfg.attacks.begin(), cfg.attacks.end(), type) == cfg.attacks.end()) {
      cfg.attacks.push_back(type);
    }
  }
  if (!cfg.attacks.empty() && (sp.shadow_train < 1 || sp.shadow_test < 1)) {
    return absl::InvalidArgumentError("attacks need non-empty shadow splits");
  }
  ASSIGN_OR_RETURN(cfg.save_attack_datasets,
                   kv.GetBool("output.attack_datasets", cfg.save_attack_datasets));

  DefenceSpec& d = cfg.defence;
  ASSIGN_OR_RETURN(d.kind, ParseDefence(kv.GetString("defence", "none")));
  ASSIGN_OR_RETURN(d.crop_height, kv.GetInt("defence.crop.height", m.height / 2));
  ASSIGN_OR_RETURN(d.crop_width, kv.GetInt("defence.crop.width", m.width / 2));
  ASSIGN_OR_RETURN(d.crop_epochs, kv.GetInt("defence.crop.epochs", 0));
  ASSIGN_OR_RETURN(d.mixup.n, kv.GetInt("defence.mixup.n", d.mixup.n));
  ASSIGN_OR_RETURN(d.mixup.alpha, kv.GetDouble("defence.mixup.alpha", d.mixup.alpha));
  ASSIGN_OR_RETURN(d.mixup.beta, kv.GetDouble("defence.mixup.beta", d.mixup.beta));
  ASSIGN_OR_RETURN(d.minmax.lambda, kv.GetDouble("defence.minmax.lambda", d.minmax.lambda));
  ASSIGN_OR_RETURN(d.minmax.adversary_learning_rate,
                   kv.GetDouble("defence.minmax.adversary_learning_rate",
                                d.minmax.adversary_learning_rate));
  ASSIGN_OR_RETURN(d.dp.target_epsilon, kv.GetDouble("defence.dp.epsilon", d.dp.target_epsilon));
  ASSIGN_OR_RETURN(d.dp.target_delta, kv.GetDouble("defence.dp.delta", d.dp.target_delta));
  ASSIGN_OR_RETURN(d.dp.clip_norm, kv.GetDouble("defence.dp.clip_norm", d.dp.clip_norm));
  ASSIGN_OR_RETURN(d.dp.noise_multiplier,
                   kv.GetDouble("defence.dp.noise_multiplier", d.dp.noise_multiplier));
  if (kv.Has("defence.dp.learning_rate")) {
    ASSIGN_OR_RETURN(double lr, kv.GetDouble("defence.dp.learning_rate", 0.0));
    d.dp.learning_rate = lr;
  }
  switch (d.kind) {
    case DefenceKind::kCrop:
      if (d.crop_height < 4 || d.crop_width < 4 || d.crop_height % 4 != 0 ||
          d.crop_width % 4 != 0 || d.crop_height > m.height || d.crop_width > m.width) {
        return absl::InvalidArgumentError(
            "crop sides must be multiples of 4 no larger than the input");
      }
      break;
    case DefenceKind::kMixup:
      RETURN_IF_ERROR(ValidateMixupConfig(d.mixup));
      break;
    case DefenceKind::kMinMax:
    case DefenceKind::kKd:
      if (sp.reference < 1) {
        return absl::InvalidArgumentError(absl::StrCat(
            Str(DefenceName(d.kind)), " needs a reference split (splits.reference)"));
      }
      if (d.minmax.lambda < 0) return absl::InvalidArgumentError("lambda must be >= 0");
      break;
    case DefenceKind::kDp:
      RETURN_IF_ERROR(ValidateDPConfig(d.dp));
      break;
    default:
      break;
  }

  const std::string shape = kv.GetString("trigger.shape", "none");
  if (shape != "none") {
    TriggerSpec t;
    ASSIGN_OR_RETURN(t.shape, ParseTriggerShape(shape));
    ASSIGN_OR_RETURN(t.value_8bit, kv.GetInt("trigger.value", t.value_8bit));
    ASSIGN_OR_RETURN(t.poison_prob, kv.GetDouble("trigger.poison_prob", t.poison_prob));
    RETURN_IF_ERROR(ValidateTriggerSpec(t));
    cfg.trigger = t;
  } else if (kv.Has("trigger.value") || kv.Has("trigger.poison_prob")) {
    return absl::InvalidArgumentError("trigger parameters given without trigger.shape");
  }

  std::vector<std::string> unknown;
  for (const auto& key : kv.UnreadKeys()) {
    if (!key.starts_with("sweep.")) unknown.push_back(key);
  }
  if (!unknown.empty()) {
    return absl::InvalidArgumentError(
        absl::StrCat("unknown config keys: ", absl::StrJoin(unknown, ", ")));
  }
  return cfg;
}

KeyValueConfig ToKv(const ExperimentConfig& cfg) {
  KeyValueConfig kv;
  auto set = [&](const std::string& key, const auto& value) {
    if constexpr (std::is_same_v<std::decay_t<decltype(value)>, double>) {
      kv.Set(key, FormatDouble(value));
    } else if constexpr (std::is_arithmetic_v<std::decay_t<decltype(value)>>) {
      kv.Set(key, absl::StrCat(value));
    } else {
      kv.Set(key, std::string(value));
    }
  };
  set("seed", cfg.seed);
  set("dataset.kind", cfg.dataset_kind);
  if (!cfg.dataset_path.empty()) set("dataset.path", cfg.dataset_path.string());
  const SyntheticTaskSpec& syn = cfg.synthetic;
  set("synthetic.height", syn.height);
  set("synthetic.width", syn.width);
  set("synthetic.channels", syn.channels);
  set("synthetic.num_classes", syn.num_classes);
  set("synthetic.min_shapes", syn.min_shapes);
  set("synthetic.max_shapes", syn.max_shapes);
  set("synthetic.noise_level", syn.noise_level);
  set("synthetic.min_contrast", syn.min_contrast);
  set("synthetic.max_contrast", syn.max_contrast);
  set("synthetic.distractors", syn.distractors);
  set("synthetic.seed", syn.seed);
  set("splits.victim_train", cfg.splits.victim_train);
  set("splits.victim_test", cfg.splits.victim_test);
  set("splits.shadow_train", cfg.splits.shadow_train);
  set("splits.shadow_test", cfg.splits.shadow_test);
  set("splits.reference", cfg.splits.reference);
  set("model.encoder", cfg.model.encoder_id);
  set("model.base_width", cfg.model.base_width);
  set("model.height", cfg.model.height);
  set("model.width", cfg.model.width);
  set("model.in_channels", cfg.model.in_channels);
  set("model.num_classes", cfg.model.num_classes);
  set("train.epochs", cfg.train.epochs);
  set("train.batch_size", cfg.train.batch_size);
  set("train.learning_rate", cfg.train.learning_rate);
  set("attack.epochs", cfg.attack_train.epochs);
  set("attack.batch_size", cfg.attack_train.batch_size);
  set("attack.learning_rate", cfg.attack_train.learning_rate);
  set("shadow.mode", cfg.shadow.mode == ShadowMode::kModelDependent
                         ? "model-dependent"
                         : "model-agnostic");
  set("shadow.encoder", cfg.shadow.mode == ShadowMode::kModelDependent
                            ? cfg.model.encoder_id
                            : cfg.shadow.shadow_encoder_id);
  if (!cfg.shadow_checkpoint.empty()) {
    set("shadow.checkpoint", cfg.shadow_checkpoint.string());
  }
  std::vector<std::string> attacks;
  for (AttackType t : cfg.attacks) attacks.emplace_back(AttackTypeName(t));
  set("attacks", attacks.empty() ? std::string("none") : absl::StrJoin(attacks, ","));
  set("output.attack_datasets", cfg.save_attack_datasets ? "true" : "false");
  const DefenceSpec& d = cfg.defence;
  set("defence", std::string(DefenceName(d.kind)));
  set("defence.crop.height", d.crop_height);
  set("defence.crop.width", d.crop_width);
  set("defence.crop.epochs", d.crop_epochs);
  set("defence.mixup.n", d.mixup.n);
  set("defence.mixup.alpha", d.mixup.alpha);
  set("defence.mixup.beta", d.mixup.beta);
  set("defence.minmax.lambda", d.minmax.lambda);
  set("defence.minmax.adversary_learning_rate", d.minmax.adversary_learning_rate);
  set("defence.dp.epsilon", d.dp.target_epsilon);
  set("defence.dp.delta", d.dp.target_delta);
  set("defence.dp.clip_norm", d.dp.clip_norm);
  set("defence.dp.noise_multiplier", d.dp.noise_multiplier);
  if (d.dp.learning_rate) set("defence.dp.learning_rate", *d.dp.learning_rate);
  if (cfg.trigger) {
    set("trigger.shape", std::string(TriggerShapeName(cfg.trigger->shape)));
    set("trigger.value", cfg.trigger->value_8bit);
    set("trigger.poison_prob", cfg.trigger->poison_prob);
  }
  return kv;
}

nlohmann::json ToJson(const HygieneReport& report) {
  return {{"checks", report.checks},
          {"violations", report.violations},
          {"ok", report.ok()}};
}

// ------------------------------------------------------------------ runs

absl::StatusOr<RunResult> RunExperiment(const ExperimentConfig& config,
                                        const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    return absl::InternalError(absl::StrCat("cannot create ", out_dir.string(), ": ",
                                            ec.message()));
  }
  if (auto previous = ReadText(out_dir / "manifest.json"); previous.ok()) {
    const auto j = nlohmann::json::parse(*previous, nullptr, false);
    if (!j.is_discarded() && j.value("status", "") == "complete") {
      return absl::AlreadyExistsError(
          absl::StrCat(out_dir.string(), " already holds a completed run"));
    }
  }
  const KeyValueConfig resolved = ToKv(config);
  nlohmann::json manifest = {{"status", "running"},
                             {"seed", config.seed},
                             {"config", resolved.values()}};
  RETURN_IF_ERROR(WriteJson(out_dir / "manifest.json", manifest));
  RETURN_IF_ERROR(WriteText(out_dir / "config.txt", resolved.ToString()));

  RunResult result;
  result.dir = out_dir;
  const absl::Status status = RunInto(config, out_dir, result, manifest);
  if (!status.ok()) {
    manifest["status"] = "failed";
    manifest["error"] = status.ToString();
    manifest["partial_outputs"] = true;
    (void)WriteJson(out_dir / "manifest.json", manifest);
    return status;
  }
  std::vector<std::string> artefacts;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    artefacts.push_back(entry.path().filename().string());
  }
  std::sort(artefacts.begin(), artefacts.end());
  manifest["artefacts"] = artefacts;
  RETURN_IF_ERROR(WriteJson(out_dir / "manifest.json", manifest));
  result.manifest = std::move(manifest);
  return result;
}

std::string SweepCsv(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::vector<std::string> header = {CsvField(axis), "status", "error",
                                     "train_dice", "test_dice", "gap"};
  for (AttackType t : kAllAttacks) {
    const std::string n(AttackTypeName(t));
    for (const char* m : {"_accuracy", "_f1", "_auc"}) header.push_back(n + m);
  }
  for (const char* h : {"backdoor_success", "triggered_fg_fraction", "benign_dice",
                        "hygiene_violations"}) {
    header.push_back(h);
  }
  std::string out = absl::StrJoin(header, ",") + "\n";
  for (const auto& row : rows) {
    std::vector<std::string> f = {CsvField(row.value), row.ok ? "ok" : "failed",
                                  CsvField(row.error)};
    if (!row.result) {
      f.resize(header.size());
    } else {
      const RunResult& r = *row.result;
      f.push_back(FormatDouble(r.train_dice));
      f.push_back(FormatDouble(r.test_dice));
      f.push_back(FormatDouble(r.gap));
      for (AttackType t : kAllAttacks) {
        auto it = r.attacks.find(t);
        if (it == r.attacks.end()) {
          f.insert(f.end(), 3, "");
        } else {
          f.push_back(FormatDouble(it->second.report.accuracy));
          f.push_back(FormatDouble(it->second.report.f1));
          f.push_back(FormatDouble(it->second.report.auc));
        }
      }
      if (r.backdoor) {
        f.push_back(r.backdoor->success ? "yes" : "no");
        f.push_back(FormatDouble(r.backdoor->triggered_fg_fraction));
        f.push_back(FormatDouble(r.backdoor->benign_dice));
      } else {
        f.insert(f.end(), 3, "");
      }
      f.push_back(absl::StrCat(r.hygiene.violations.size()));
    }
    out += absl::StrJoin(f, ",") + "\n";
  }
  return out;
}

absl::StatusOr<std::vector<SweepRow>> Sweep(const KeyValueConfig& base,
                                            const std::string& axis,
                                            const std::vector<std::string>& values,
                                            const fs::path& out_dir) {
  if (values.empty()) return absl::InvalidArgumentError("sweep needs values");
  const std::vector<std::string> keys = absl::StrSplit(axis, '+', absl::SkipEmpty());
  if (keys.empty()) return absl::InvalidArgumentError("sweep needs an axis");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) return absl::InternalError(absl::StrCat("cannot create ", out_dir.string()));

  std::vector<SweepRow> rows;
  for (size_t i = 0; i < values.size(); ++i) {
    SweepRow row;
    row.value = values[i];
    KeyValueConfig kv = base;
    for (const auto& key : keys) kv.Set(key, values[i]);
    absl::StatusOr<ExperimentConfig> cfg = ExperimentConfigFromKv(kv);
    if (!cfg.ok()) {
      row.error = cfg.status().ToString();
    } else {
      std::string label = values[i];
      for (char& c : label) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-') c = '_';
      }
      absl::StatusOr<RunResult> run =
          RunExperiment(*cfg, out_dir / absl::StrFormat("%02d_%s", i, label));
      if (run.ok()) {
        row.ok = run->hygiene.ok();
        if (!row.ok) row.error = "hygiene violations";
        row.result = std::move(*run);
      } else {
        row.error = run.status().ToString();
      }
    }
    rows.push_back(std::move(row));
    RETURN_IF_ERROR(WriteText(out_dir / "sweep.csv", SweepCsv(axis, rows)));
  }
  return rows;
}

// ----------------------------------------------------------------- plots

absl::Status EmitPlots(const fs::path& dir) {
  const bool is_run = fs::exists(dir / "report.json");
  const bool is_sweep = fs::exists(dir / "sweep.csv");
  if (!is_run && !is_sweep) {
    return absl::NotFoundError(
        absl::StrCat("missing artefact: no report.json or sweep.csv in ", dir.string()));
  }
  const fs::path plots = dir / "plots";
  fs::create_directories(plots);
  nlohmann::json index = nlohmann::json::array();

  if (is_run) {
    for (AttackType t : kAllAttacks) {
      const std::string name(AttackTypeName(t));
      const fs::path roc_path = dir / ("roc_" + name + ".csv");
      if (!fs::exists(roc_path)) continue;
      ASSIGN_OR_RETURN(std::string text, ReadText(roc_path));
      std::string linear = "fpr,tpr\n";
      std::string loglog = "fpr,tpr,log10_fpr,log10_tpr\n";
      bool first = true;
      for (absl::string_view line : absl::StrSplit(text, '\n', absl::SkipEmpty())) {
        if (first) {
          first = false;
          continue;
        }
        const std::vector<absl::string_view> cells = absl::StrSplit(line, ',');
        double fpr, tpr;
        if (cells.size() != 2 || !absl::SimpleAtod(cells[0], &fpr) ||
            !absl::SimpleAtod(cells[1], &tpr)) {
          return absl::DataLossError(absl::StrCat("malformed ", roc_path.string()));
        }
        absl::StrAppend(&linear, line, "\n");
        if (fpr > 0 && tpr > 0) {
          absl::StrAppendFormat(&loglog, "%s,%.9g,%.9g\n", line, std::log10(fpr),
                                std::log10(tpr));
        }
      }
      const std::string lin_name = "roc_" + name + "_linear.csv";
      const std::string log_name = "roc_" + name + "_loglog.csv";
      RETURN_IF_ERROR(WriteText(plots / lin_name, linear));
      RETURN_IF_ERROR(WriteText(plots / log_name, loglog));
      index.push_back({{"file", lin_name}, {"kind", "roc"}, {"attack", name},
                       {"x_scale", "linear"}, {"y_scale", "linear"}});
      index.push_back({{"file", log_name}, {"kind", "roc"}, {"attack", name},
                       {"x_scale", "log"}, {"y_scale", "log"}});
    }
  }

  if (is_sweep) {
    ASSIGN_OR_RETURN(std::string text, ReadText(dir / "sweep.csv"));
    std::vector<std::vector<std::string>> table;
    for (absl::string_view line : absl::StrSplit(text, '\n', absl::SkipEmpty())) {
      table.push_back(absl::StrSplit(line, ','));
    }
    if (table.empty()) return absl::DataLossError("empty sweep.csv");
    const auto& header = table.front();
    auto column = [&](const std::string& name) -> int {
      auto it = std::find(header.begin(), header.end(), name);
      return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };
    std::vector<std::pair<std::string, int>> acc_cols;
    for (AttackType t : kAllAttacks) {
      const std::string n = std::string(AttackTypeName(t)) + "_accuracy";
      if (int c = column(n); c >= 0) acc_cols.emplace_back(n, c);
    }
    const int status = column("status");
    const int gap = column("gap");
    const int dice = column("test_dice");
    if (status < 0 || gap < 0 || dice < 0) {
      return absl::DataLossError("sweep.csv lacks required columns");
    }
    std::string scatter = "value,gap";
    std::string bars = "value,test_dice";
    for (const auto& [n, c] : acc_cols) {
      absl::StrAppend(&scatter, ",", n);
      absl::StrAppend(&bars, ",", n);
    }
    scatter += "\n";
    bars += "\n";
    for (size_t r = 1; r < table.size(); ++r) {
      const auto& row = table[r];
      if (row.size() != header.size() || row[status] != "ok") continue;
      absl::StrAppend(&scatter, row[0], ",", row[gap]);
      absl::StrAppend(&bars, row[0], ",", row[dice]);
      for (const auto& [n, c] : acc_cols) {
        absl::StrAppend(&scatter, ",", row[c]);
        absl::StrAppend(&bars, ",", row[c]);
      }
      scatter += "\n";
      bars += "\n";
    }
    RETURN_IF_ERROR(WriteText(plots / "gap_vs_accuracy.csv", scatter));
    RETURN_IF_ERROR(WriteText(plots / "utility_bars.csv", bars));
    index.push_back({{"file", "gap_vs_accuracy.csv"}, {"kind", "scatter"},
                     {"x", "gap"}, {"x_scale", "linear"}, {"y_scale", "linear"}});
    index.push_back({{"file", "utility_bars.csv"}, {"kind", "bars"},
                     {"x", header[0]}, {"y_scale", "linear"}});
  }
  return WriteJson(plots / "plots.json", index);
}

}  // namespace segpriv
