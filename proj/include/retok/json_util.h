// Copyright 2026 The retok Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RETOK_JSON_UTIL_H_
#define RETOK_JSON_UTIL_H_

#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace retok {

// Schema violation in a JSON config or sidecar; the message names the field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Strict reader over one JSON object. Every key must be consumed through
// get/require/child before finish(), otherwise finish() rejects it.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& obj, std::string path)
      : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) {
      throw ConfigError(where() + ": expected an object");
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field(key) + ": wrong type (" +
                        obj_.at(key).type_name() + ")");
    }
  }

  template <typename T>
  void require(const char* key, T& out) {
    if (!obj_.contains(key)) throw ConfigError(field(key) + ": missing");
    get(key, out);
  }

  JsonReader child(const char* key) {
    seen_.insert(key);
    if (!obj_.contains(key)) {
      static const nlohmann::json kEmpty = nlohmann::json::object();
      return JsonReader(kEmpty, field(key));
    }
    return JsonReader(obj_.at(key), field(key));
  }

  void finish() const {
    for (const auto& [key, _] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key) + ": unknown key");
    }
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const nlohmann::json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace retok

#endif  // RETOK_JSON_UTIL_H_
