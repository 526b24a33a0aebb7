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

#include "segpriv/dp.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "absl/strings/str_format.h"

namespace segpriv {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double LogAddExp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

absl::Status ValidateDPConfig(const DPConfig& config) {
  if (!(config.target_epsilon > 0)) {
    return absl::InvalidArgumentError("target epsilon must be positive");
  }
  if (!(config.target_delta > 0 && config.target_delta < 1)) {
    return absl::InvalidArgumentError("target delta must lie in (0, 1)");
  }
  if (!(config.clip_norm > 0)) {
    return absl::InvalidArgumentError("clip norm must be positive");
  }
  if (config.noise_multiplier < 0) {
    return absl::InvalidArgumentError("noise multiplier must be >= 0");
  }
  if (config.learning_rate && !(*config.learning_rate > 0)) {
    return absl::InvalidArgumentError("learning rate must be positive");
  }
  return absl::OkStatus();
}

double ClipToNorm(std::span<float> gradient, double clip_norm) {
  double sq = 0.0;
  for (float g : gradient) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (float& g : gradient) g = static_cast<float>(g * scale);
    // Rounding in float can leave the norm a hair above the bound.
    double after = 0.0;
    for (float g : gradient) after += static_cast<double>(g) * g;
    if (std::sqrt(after) > clip_norm) {
      const float shrink = static_cast<float>(clip_norm / std::sqrt(after));
      for (float& g : gradient) g = std::nextafter(g * shrink, 0.0f);
    }
  }
  return norm;
}

absl::StatusOr<NoisedGradient> DpSgdStep(
    std::span<const std::vector<float>> per_sample_gradients,
    size_t dimension, const DPConfig& config, double normaliser, Rng& rng) {
  if (!(normaliser > 0)) {
    return absl::InvalidArgumentError("normaliser must be positive");
  }
  std::vector<double> sum(dimension, 0.0);
  std::vector<float> clipped;
  for (const auto& g : per_sample_gradients) {
    if (g.size() != dimension) {
      return absl::InvalidArgumentError("per-sample gradient size mismatch");
    }
    clipped.assign(g.begin(), g.end());
    for (float v : clipped) {
      if (!std::isfinite(v)) {
        return absl::InvalidArgumentError("non-finite per-sample gradient");
      }
    }
    ClipToNorm(clipped, config.clip_norm);
    for (size_t i = 0; i < dimension; ++i) sum[i] += clipped[i];
  }
  NoisedGradient out;
  out.clipped_mean.resize(dimension);
  out.gradient.resize(dimension);
  const double stddev = config.noise_multiplier * config.clip_norm / normaliser;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (size_t i = 0; i < dimension; ++i) {
    out.clipped_mean[i] = static_cast<float>(sum[i] / normaliser);
    const double z = stddev > 0 ? stddev * noise(rng) : 0.0;
    out.gradient[i] = static_cast<float>(sum[i] / normaliser + z);
  }
  return out;
}

// ------------------------------------------------------------ accountant

RdpAccountant::RdpAccountant() {
  for (int a = 2; a <= 64; ++a) orders_.push_back(a);
  for (int a : {72, 80, 96, 128, 160, 192, 256, 384, 512}) orders_.push_back(a);
  rdp_.assign(orders_.size(), 0.0);
}

double RdpAccountant::StepRdp(double noise_multiplier, double sampling_rate,
                              int order) {
  if (sampling_rate <= 0) return 0.0;
  if (noise_multiplier <= 0) return kInf;
  const double s2 = noise_multiplier * noise_multiplier;
  if (sampling_rate >= 1.0) return order / (2.0 * s2);
  // log A_order = log sum_k C(order,k) (1-q)^(order-k) q^k exp((k^2-k)/(2s^2))
  const double log_q = std::log(sampling_rate);
  const double log_1mq = std::log1p(-sampling_rate);
  double log_a = -kInf;
  for (int k = 0; k <= order; ++k) {
    const double log_binom = std::lgamma(order + 1.0) - std::lgamma(k + 1.0) -
                             std::lgamma(order - k + 1.0);
    const double term = log_binom + k * log_q + (order - k) * log_1mq +
                        (static_cast<double>(k) * k - k) / (2.0 * s2);
    log_a = LogAddExp(log_a, term);
  }
  return log_a / (order - 1);
}

void RdpAccountant::Compose(double noise_multiplier, double sampling_rate,
                            int steps) {
  if (steps <= 0) return;
  for (size_t i = 0; i < orders_.size(); ++i) {
    rdp_[i] += steps * StepRdp(noise_multiplier, sampling_rate, orders_[i]);
  }
  steps_ += steps;
}

double RdpAccountant::Epsilon(double delta) const {
  double best = kInf;
  for (size_t i = 0; i < orders_.size(); ++i) {
    const double eps = rdp_[i] + std::log(1.0 / delta) / (orders_[i] - 1);
    best = std::min(best, eps);
  }
  return best;
}

double ComputeEpsilon(double noise_multiplier, double sampling_rate, int steps,
                      double delta) {
  RdpAccountant accountant;
  accountant.Compose(noise_multiplier, sampling_rate, steps);
  return accountant.Epsilon(delta);
}

absl::StatusOr<double> CalibrateNoiseMultiplier(double target_epsilon,
                                                double delta,
                                                double sampling_rate,
                                                int steps) {
  if (!(target_epsilon > 0) || !(delta > 0 && delta < 1)) {
    return absl::InvalidArgumentError("invalid privacy target");
  }
  constexpr double kMaxSigma = 1e4;
  if (ComputeEpsilon(kMaxSigma, sampling_rate, steps, delta) > target_epsilon) {
    return absl::FailedPreconditionError(absl::StrFormat(
        "no noise multiplier up to %g reaches epsilon %g at delta %g",
        kMaxSigma, target_epsilon, delta));
  }
  double lo = 0.0;
  double hi = 1.0;
  while (ComputeEpsilon(hi, sampling_rate, steps, delta) > target_epsilon) {
    lo = hi;
    hi *= 2.0;
  }
  while (hi - lo > 1e-3 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (ComputeEpsilon(mid, sampling_rate, steps, delta) > target_epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

}  // namespace segpriv
