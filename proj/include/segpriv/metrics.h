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

#ifndef SEGPRIV_METRICS_H_
#define SEGPRIV_METRICS_H_

#include <map>
#include <span>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "nlohmann/json.hpp"
#include "segpriv/data.h"
#include "segpriv/tensor.h"

namespace segpriv {

class SegmentationOracle;

struct AccuracyF1 {
  double accuracy = 0.0;
  double f1 = 0.0;
};

// Positive class is "member" (1). F1 is 0 when 2TP + FP + FN = 0.
absl::StatusOr<AccuracyF1> ComputeAccuracyF1(std::span<const int> predictions,
                                             std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;

  friend bool operator==(const RocPoint&, const RocPoint&) = default;
  friend auto operator<=>(const RocPoint&, const RocPoint&) = default;
};

// Step ROC curve from thresholding `scores` (member iff score >= threshold)
// at +inf and at every distinct score. Starts at (0,0), ends at (1,1).
// kInvalidArgument unless both classes are present.
absl::StatusOr<std::vector<RocPoint>> RocCurve(std::span<const double> scores,
                                               std::span<const int> labels);

// For each level, the largest TPR among points with FPR <= level.
std::map<double, double> TprAtFpr(std::span<const RocPoint> roc,
                                  std::span<const double> fpr_levels);

// Trapezoidal area under a ROC curve.
double RocAuc(std::span<const RocPoint> roc);

// 2|A n B| / (|A| + |B|) over pixels of class k; 1.0 when both are empty.
absl::StatusOr<double> Dice(const LabelMask& pred, const LabelMask& gt, int k);

// Mean Dice over foreground classes 1..K-1 (masks must share a shape).
double MeanForegroundDice(const LabelMask& pred, const LabelMask& gt,
                          int num_classes);

// Mean foreground Dice on train minus the same on test. May be negative.
absl::StatusOr<double> GeneralisationGap(const SegmentationOracle& model,
                                         std::span<const ImageMaskPair> train,
                                         std::span<const ImageMaskPair> test);

inline const std::vector<double>& DefaultFprLevels() {
  static const auto* const kLevels = new std::vector<double>{0.001, 0.01, 0.05, 0.1};
  return *kLevels;
}

struct MetricsReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  std::vector<RocPoint> roc;
  std::map<double, double> tpr_at_fpr;
  int n_members = 0;
  int n_nonmembers = 0;
};

// Accuracy/F1 from hard decisions, ROC from continuous scores.
absl::StatusOr<MetricsReport> BuildMetricsReport(std::span<const int> decisions,
                                                 std::span<const double> scores,
                                                 std::span<const int> labels);

nlohmann::json ToJson(const MetricsReport& report);
std::string RocCsv(std::span<const RocPoint> roc);

}  // namespace segpriv

#endif  // SEGPRIV_METRICS_H_
