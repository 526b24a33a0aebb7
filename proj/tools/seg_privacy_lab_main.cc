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

// seg-privacy-lab: command-line front end for the experiment harness.
//
//   seg-privacy-lab train        --config c.txt --out runs/victim
//   seg-privacy-lab attack       --config c.txt --out runs/attack
//   seg-privacy-lab defend-sweep --config c.txt --out runs/defences
//   seg-privacy-lab poison-sweep --config c.txt --out runs/poison
//   seg-privacy-lab sweep        --config c.txt --out runs/size
//   seg-privacy-lab report       --out runs/attack
//
// Exit codes: 0 success, 1 error, 2 hygiene violations.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_join.h"
#include "nlohmann/json.hpp"
#include "segpriv/harness.h"
#include "segpriv/kv_config.h"
#include "segpriv/status_macros.h"

namespace {

namespace fs = std::filesystem;
using segpriv::KeyValueConfig;

struct CommonArgs {
  std::string config;
  std::optional<int64_t> seed;
  std::string out;
};

absl::StatusOr<KeyValueConfig> LoadConfig(const CommonArgs& args) {
  KeyValueConfig kv;
  if (!args.config.empty()) {
    ASSIGN_OR_RETURN(kv, KeyValueConfig::Load(args.config));
  }
  if (args.seed) {
    if (*args.seed < 0) return absl::InvalidArgumentError("--seed must be >= 0");
    kv.Set("seed", absl::StrCat(*args.seed));
  }
  return kv;
}

nlohmann::json Summary(const segpriv::RunResult& r) {
  nlohmann::json j = {{"dir", r.dir.string()},
                      {"train_dice", r.train_dice},
                      {"test_dice", r.test_dice},
                      {"gap", r.gap},
                      {"hygiene", segpriv::ToJson(r.hygiene)}};
  for (const auto& [type, attack] : r.attacks) {
    j["attacks"][std::string(segpriv::AttackTypeName(type))] = {
        {"accuracy", attack.report.accuracy},
        {"f1", attack.report.f1},
        {"auc", attack.report.auc}};
  }
  if (r.backdoor) {
    j["backdoor"] = {{"success", r.backdoor->success},
                     {"triggered_fg_fraction", r.backdoor->triggered_fg_fraction},
                     {"benign_dice", r.backdoor->benign_dice}};
  }
  return j;
}

int Fail(const absl::Status& status) {
  std::cerr << "error: " << status << "\n";
  return 1;
}

int RunSingle(const CommonArgs& args, bool attacks) {
  auto kv = LoadConfig(args);
  if (!kv.ok()) return Fail(kv.status());
  if (!attacks) kv->Set("attacks", "none");
  auto cfg = segpriv::ExperimentConfigFromKv(*kv);
  if (!cfg.ok()) return Fail(cfg.status());
  auto run = segpriv::RunExperiment(*cfg, args.out);
  if (!run.ok()) return Fail(run.status());
  std::cout << Summary(*run).dump(2) << "\n";
  return run->hygiene.ok() ? 0 : 2;
}

int RunSweep(const CommonArgs& args, const std::string& default_axis,
             const std::vector<std::string>& default_values,
             const std::vector<std::pair<std::string, std::string>>& defaults) {
  auto kv = LoadConfig(args);
  if (!kv.ok()) return Fail(kv.status());
  for (const auto& [key, value] : defaults) {
    if (!kv->Has(key)) kv->Set(key, value);
  }
  const std::string axis = kv->GetString("sweep.axis", default_axis);
  const std::vector<std::string> values = kv->GetList("sweep.values", default_values);
  if (axis.empty() || values.empty()) {
    return Fail(absl::InvalidArgumentError("set sweep.axis and sweep.values"));
  }
  auto rows = segpriv::Sweep(*kv, axis, values, args.out);
  if (!rows.ok()) return Fail(rows.status());
  std::cout << segpriv::SweepCsv(axis, *rows);
  bool hygiene_ok = true;
  for (const auto& row : *rows) {
    if (row.result && !row.result->hygiene.ok()) hygiene_ok = false;
  }
  return hygiene_ok ? 0 : 2;
}

int RunReport(const CommonArgs& args) {
  const fs::path dir = args.out;
  absl::Status status = segpriv::EmitPlots(dir);
  if (!status.ok()) return Fail(status);
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_directory() && fs::exists(entry.path() / "report.json")) {
      if (absl::Status s = segpriv::EmitPlots(entry.path()); !s.ok()) return Fail(s);
    }
  }
  std::cout << "plot data written under " << (dir / "plots").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Membership-inference and poisoning auditor for segmentation models"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* config = sub->add_option("--config", args.config, "key = value config file");
    if (config_required) config->required();
    sub->add_option("--seed", args.seed, "master seed (overrides the config)");
    sub->add_option("--out", args.out, "output directory")->required();
  };

  auto* train = app.add_subcommand("train", "train the (defended) victim only");
  auto* attack = app.add_subcommand("attack", "full run: victim, shadow, attacks");
  auto* defend = app.add_subcommand("defend-sweep", "one run per defence");
  auto* poison = app.add_subcommand("poison-sweep", "one run per poisoning setting");
  auto* sweep = app.add_subcommand("sweep", "one run per value of sweep.axis");
  auto* report = app.add_subcommand("report", "emit plot-ready data for a run or sweep");
  for (auto* sub : {train, attack, defend, poison, sweep}) add_common(sub, true);
  add_common(report, false);

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) return RunSingle(args, /*attacks=*/false);
  if (attack->parsed()) return RunSingle(args, /*attacks=*/true);
  if (defend->parsed()) {
    return RunSweep(args, "defence",
                    {"none", "argmax", "crop", "mixup", "minmax", "dp", "kd"}, {});
  }
  if (poison->parsed()) {
    return RunSweep(args, "trigger.poison_prob",
                    {"0", "0.01", "0.02", "0.03", "0.04", "0.05"},
                    {{"trigger.shape", "line"}});
  }
  if (sweep->parsed()) return RunSweep(args, "", {}, {});
  return RunReport(args);
}
