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

#include "segpriv/kv_config.h"

#include <fstream>
#include <sstream>

#include "absl/strings/ascii.h"
#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_split.h"

namespace segpriv {

absl::StatusOr<KeyValueConfig> KeyValueConfig::Parse(const std::string& text) {
  KeyValueConfig config;
  int line_no = 0;
  for (absl::string_view raw : absl::StrSplit(text, '\n')) {
    ++line_no;
    absl::string_view line = raw;
    if (const size_t hash = line.find('#'); hash != absl::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = absl::StripAsciiWhitespace(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == absl::string_view::npos) {
      return absl::InvalidArgumentError(
          absl::StrCat("line ", line_no, ": expected key = value"));
    }
    const std::string key(absl::StripAsciiWhitespace(line.substr(0, eq)));
    const std::string value(absl::StripAsciiWhitespace(line.substr(eq + 1)));
    if (key.empty()) {
      return absl::InvalidArgumentError(absl::StrCat("line ", line_no, ": empty key"));
    }
    if (!config.values_.emplace(key, value).second) {
      return absl::InvalidArgumentError(
          absl::StrCat("line ", line_no, ": duplicate key ", key));
    }
  }
  return config;
}

absl::StatusOr<KeyValueConfig> KeyValueConfig::Load(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot read ", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return Parse(buffer.str());
}

std::string KeyValueConfig::GetString(const std::string& key,
                                      const std::string& fallback) const {
  read_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

absl::StatusOr<int> KeyValueConfig::GetInt(const std::string& key,
                                           int fallback) const {
  read_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  int out;
  if (!absl::SimpleAtoi(it->second, &out)) {
    return absl::InvalidArgumentError(
        absl::StrCat(key, ": expected an integer, got '", it->second, "'"));
  }
  return out;
}

absl::StatusOr<double> KeyValueConfig::GetDouble(const std::string& key,
                                                 double fallback) const {
  read_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  double out;
  if (!absl::SimpleAtod(it->second, &out)) {
    return absl::InvalidArgumentError(
        absl::StrCat(key, ": expected a number, got '", it->second, "'"));
  }
  return out;
}

absl::StatusOr<bool> KeyValueConfig::GetBool(const std::string& key,
                                             bool fallback) const {
  read_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  bool out;
  if (!absl::SimpleAtob(it->second, &out)) {
    return absl::InvalidArgumentError(
        absl::StrCat(key, ": expected a boolean, got '", it->second, "'"));
  }
  return out;
}

std::vector<std::string> KeyValueConfig::GetList(
    const std::string& key, const std::vector<std::string>& fallback) const {
  read_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<std::string> out;
  for (absl::string_view part : absl::StrSplit(it->second, ',')) {
    part = absl::StripAsciiWhitespace(part);
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

std::vector<std::string> KeyValueConfig::UnreadKeys() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_) {
    if (!read_.contains(key)) out.push_back(key);
  }
  return out;
}

std::string KeyValueConfig::ToString() const {
  std::string out;
  for (const auto& [key, value] : values_) absl::StrAppend(&out, key, " = ", value, "\n");
  return out;
}

}  // namespace segpriv
