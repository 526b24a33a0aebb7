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

#include "segpriv/tensor.h"

#include <algorithm>
#include <cstring>

namespace segpriv {

Tensor ConcatChannels(const Tensor& first, const Tensor& second) {
  Tensor out(first.channels() + second.channels(), first.height(),
             first.width());
  auto dst = out.values();
  std::copy(first.values().begin(), first.values().end(), dst.begin());
  std::copy(second.values().begin(), second.values().end(),
            dst.begin() + first.size());
  return out;
}

uint64_t Fingerprint(const Tensor& tensor, uint64_t seed) {
  uint64_t hash = seed;
  auto mix = [&hash](const void* data, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ull;
    }
  };
  const int dims[3] = {tensor.channels(), tensor.height(), tensor.width()};
  mix(dims, sizeof(dims));
  mix(tensor.values().data(), tensor.size() * sizeof(float));
  return hash;
}

}  // namespace segpriv
