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

#ifndef SEGPRIV_RANDOM_H_
#define SEGPRIV_RANDOM_H_

#include <cstdint>
#include <random>

namespace segpriv {

// All randomness flows through explicitly seeded engines of this type.
using Rng = std::mt19937_64;

// Deterministically derives an independent seed for a named sub-stream.
inline uint64_t DeriveSeed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline double SampleBeta(Rng& rng, double alpha, double beta) {
  std::gamma_distribution<double> x(alpha, 1.0);
  std::gamma_distribution<double> y(beta, 1.0);
  const double a = x(rng);
  const double b = y(rng);
  return a / (a + b);
}

}  // namespace segpriv

#endif  // SEGPRIV_RANDOM_H_
