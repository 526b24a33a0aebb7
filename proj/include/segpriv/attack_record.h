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

#ifndef SEGPRIV_ATTACK_RECORD_H_
#define SEGPRIV_ATTACK_RECORD_H_

#include <string>

#include "segpriv/tensor.h"

namespace segpriv {

// Input of a membership classifier together with its ground truth.
//
// Type-I records hold only prediction channels. Type-II records hold the
// prediction channels followed by the ground-truth channels.
struct AttackRecord {
  std::string id;
  Tensor input;
  int label = 0;  // 1 = member
};

}  // namespace segpriv

#endif  // SEGPRIV_ATTACK_RECORD_H_
