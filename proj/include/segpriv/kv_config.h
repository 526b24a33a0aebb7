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

// Flat `key = value` configuration text. Blank lines and `#` comments are
// ignored; keys are dotted paths such as `train.epochs`.

#ifndef SEGPRIV_KV_CONFIG_H_
#define SEGPRIV_KV_CONFIG_H_

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"

namespace segpriv {

class KeyValueConfig {
 public:
  // kInvalidArgument on a line without '=' or a repeated key.
  static absl::StatusOr<KeyValueConfig> Parse(const std::string& text);
  static absl::StatusOr<KeyValueConfig> Load(const std::filesystem::path& path);

  bool Has(const std::string& key) const { return values_.contains(key); }
  void Set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }

  std::string GetString(const std::string& key, const std::string& fallback) const;
  absl::StatusOr<int> GetInt(const std::string& key, int fallback) const;
  absl::StatusOr<double> GetDouble(const std::string& key, double fallback) const;
  absl::StatusOr<bool> GetBool(const std::string& key, bool fallback) const;
  // Comma-separated list with surrounding whitespace trimmed.
  std::vector<std::string> GetList(const std::string& key,
                                   const std::vector<std::string>& fallback) const;

  // Keys present in the text that no getter has read.
  std::vector<std::string> UnreadKeys() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string ToString() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> read_;
};

}  // namespace segpriv

#endif  // SEGPRIV_KV_CONFIG_H_
