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

#include "segpriv/metrics.h"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "absl/strings/str_format.h"
#include "segpriv/models.h"
#include "segpriv/status_macros.h"

namespace segpriv {

absl::StatusOr<AccuracyF1> ComputeAccuracyF1(std::span<const int> predictions,
                                             std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "length mismatch: %d predictions, %d labels", predictions.size(),
        labels.size()));
  }
  if (labels.empty()) return absl::InvalidArgumentError("no samples");
  int tp = 0, fp = 0, fn = 0, correct = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] != 0;
    const bool y = labels[i] != 0;
    correct += p == y;
    tp += p && y;
    fp += p && !y;
    fn += !p && y;
  }
  AccuracyF1 out;
  out.accuracy = static_cast<double>(correct) / labels.size();
  const int denom = 2 * tp + fp + fn;
  out.f1 = denom == 0 ? 0.0 : 2.0 * tp / denom;
  return out;
}

absl::StatusOr<std::vector<RocPoint>> RocCurve(std::span<const double> scores,
                                               std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    return absl::InvalidArgumentError("scores and labels differ in length");
  }
  const int positives =
      static_cast<int>(std::count_if(labels.begin(), labels.end(),
                                     [](int l) { return l != 0; }));
  const int negatives = static_cast<int>(labels.size()) - positives;
  if (positives == 0 || negatives == 0) {
    return absl::InvalidArgumentError("ROC needs both members and non-members");
  }
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> roc = {{0.0, 0.0}};
  int tp = 0;
  int fp = 0;
  for (size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      if (labels[order[i]]) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    roc.push_back({static_cast<double>(fp) / negatives,
                   static_cast<double>(tp) / positives});
  }
  return roc;
}

std::map<double, double> TprAtFpr(std::span<const RocPoint> roc,
                                  std::span<const double> fpr_levels) {
  std::map<double, double> out;
  for (double level : fpr_levels) {
    double best = 0.0;
    for (const auto& p : roc) {
      if (p.fpr <= level) best = std::max(best, p.tpr);
    }
    out[level] = best;
  }
  return out;
}

double RocAuc(std::span<const RocPoint> roc) {
  double area = 0.0;
  for (size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2;
  }
  return area;
}

absl::StatusOr<double> Dice(const LabelMask& pred, const LabelMask& gt, int k) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    return absl::InvalidArgumentError("shape mismatch between masks");
  }
  size_t a = 0, b = 0, both = 0;
  auto p = pred.labels();
  auto g = gt.labels();
  for (size_t i = 0; i < p.size(); ++i) {
    const bool in_a = p[i] == k;
    const bool in_b = g[i] == k;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * both / (a + b);
}

double MeanForegroundDice(const LabelMask& pred, const LabelMask& gt,
                          int num_classes) {
  double total = 0.0;
  for (int k = 1; k < num_classes; ++k) total += *Dice(pred, gt, k);
  return total / (num_classes - 1);
}

absl::StatusOr<double> GeneralisationGap(const SegmentationOracle& model,
                                         std::span<const ImageMaskPair> train,
                                         std::span<const ImageMaskPair> test) {
  if (train.empty() || test.empty()) {
    return absl::InvalidArgumentError("generalisation gap needs both sets");
  }
  ASSIGN_OR_RETURN(double train_dice, MeanDice(model, train));
  ASSIGN_OR_RETURN(double test_dice, MeanDice(model, test));
  return train_dice - test_dice;
}

absl::StatusOr<MetricsReport> BuildMetricsReport(std::span<const int> decisions,
                                                 std::span<const double> scores,
                                                 std::span<const int> labels) {
  ASSIGN_OR_RETURN(AccuracyF1 af, ComputeAccuracyF1(decisions, labels));
  MetricsReport report;
  report.accuracy = af.accuracy;
  report.f1 = af.f1;
  ASSIGN_OR_RETURN(report.roc, RocCurve(scores, labels));
  report.auc = RocAuc(report.roc);
  report.tpr_at_fpr = TprAtFpr(report.roc, DefaultFprLevels());
  for (int l : labels) {
    if (l) {
      ++report.n_members;
    } else {
      ++report.n_nonmembers;
    }
  }
  return report;
}

nlohmann::json ToJson(const MetricsReport& report) {
  nlohmann::json tpr = nlohmann::json::object();
  for (const auto& [level, value] : report.tpr_at_fpr) {
    tpr[absl::StrFormat("%g", level)] = value;
  }
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& p : report.roc) roc.push_back({p.fpr, p.tpr});
  return {{"accuracy", report.accuracy},   {"f1", report.f1},
          {"auc", report.auc},             {"tpr_at_fpr", tpr},
          {"n_members", report.n_members}, {"n_nonmembers", report.n_nonmembers},
          {"roc", roc}};
}

std::string RocCsv(std::span<const RocPoint> roc) {
  std::ostringstream out;
  out << "fpr,tpr\n";
  for (const auto& p : roc) out << absl::StrFormat("%.9g,%.9g\n", p.fpr, p.tpr);
  return out.str();
}

}  // namespace segpriv
