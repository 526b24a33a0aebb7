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

// DP-SGD mechanics: per-sample clipping, Gaussian noise and a Renyi
// differential privacy accountant for the Poisson-subsampled Gaussian
// mechanism.

#ifndef SEGPRIV_DP_H_
#define SEGPRIV_DP_H_

#include <optional>
#include <span>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "segpriv/random.h"

namespace segpriv {

struct DPConfig {
  double target_epsilon = 8.5;
  double target_delta = 2e-3;
  double clip_norm = 1.0;
  // Filled in by calibration when left at zero.
  double noise_multiplier = 0.0;
  std::optional<double> learning_rate;
};

absl::Status ValidateDPConfig(const DPConfig& config);

// Scales `gradient` down so its L2 norm is at most `clip_norm`. Returns the
// norm before clipping.
double ClipToNorm(std::span<float> gradient, double clip_norm);

struct NoisedGradient {
  std::vector<float> gradient;      // clipped mean + noise
  std::vector<float> clipped_mean;  // before noise
};

// Clips each per-sample gradient, averages over `normaliser` samples (the
// expected batch size under Poisson sampling) and adds N(0, s^2) per
// coordinate with s = noise_multiplier * clip_norm / normaliser.
absl::StatusOr<NoisedGradient> DpSgdStep(
    std::span<const std::vector<float>> per_sample_gradients,
    size_t dimension, const DPConfig& config, double normaliser, Rng& rng);

// Renyi DP accountant over integer orders.
class RdpAccountant {
 public:
  RdpAccountant();

  // Accounts `steps` applications of the subsampled Gaussian mechanism.
  void Compose(double noise_multiplier, double sampling_rate, int steps);
  double Epsilon(double delta) const;
  int steps() const { return steps_; }

  // RDP of one subsampled Gaussian step at integer order `order`.
  static double StepRdp(double noise_multiplier, double sampling_rate,
                        int order);

 private:
  std::vector<int> orders_;
  std::vector<double> rdp_;
  int steps_ = 0;
};

double ComputeEpsilon(double noise_multiplier, double sampling_rate, int steps,
                      double delta);

// Smallest noise multiplier (to 1e-3 relative precision) whose accounted
// epsilon is at most `target_epsilon`. kFailedPrecondition when infeasible.
absl::StatusOr<double> CalibrateNoiseMultiplier(double target_epsilon,
                                                double delta,
                                                double sampling_rate,
                                                int steps);

}  // namespace segpriv

#endif  // SEGPRIV_DP_H_
