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

#include "retok/corpus.h"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace retok {

using nlohmann::json;

const std::vector<LabeledExample>& Dataset::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + std::string(name) +
                              "' (expected train, valid or test)");
}

std::vector<LabeledExample> load_jsonl(const std::filesystem::path& path,
                                       std::string_view split,
                                       const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::vector<LabeledExample> out;
  std::string line;
  int lineno = 0;
  const auto where = [&] {
    return std::string(split) + ":" + std::to_string(lineno) + ": ";
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(),
                    [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(where() + "malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw std::runtime_error(where() + "not an object");
    if (!obj.contains("text")) {
      throw std::runtime_error(where() + "schema error: missing text");
    }
    if (!obj.contains("label")) {
      throw std::runtime_error(where() + "schema error: missing label");
    }
    if (!obj["text"].is_string()) {
      throw std::runtime_error(where() + "schema error: text is not a string");
    }
    if (!obj["label"].is_number_integer()) {
      throw std::runtime_error(where() +
                               "schema error: label is not an integer");
    }
    LabeledExample ex;
    ex.text = obj["text"].get<std::string>();
    if (options.nfkc) ex.text = nfkc(ex.text);
    ex.label = obj["label"].get<int>();
    ex.id = options.id_offset + static_cast<int64_t>(out.size());
    chars_of(ex.text);  // validates UTF-8
    const bool blank = std::all_of(ex.text.begin(), ex.text.end(),
                                   [](unsigned char c) { return std::isspace(c); });
    if (blank) throw std::runtime_error(where() + "empty text");
    if (ex.label < 0 ||
        (options.num_labels && ex.label >= *options.num_labels)) {
      throw std::runtime_error(where() + "label " + std::to_string(ex.label) +
                               " out of range");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path,
                std::span<const LabeledExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& ex : examples) {
    json obj = {{"label", ex.label}, {"text", ex.text}};
    out << obj.dump() << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir,
                     std::optional<int> num_labels, bool nfkc) {
  Dataset ds;
  LoadOptions opts{num_labels, nfkc, 0};
  ds.train = load_jsonl(dir / "train.jsonl", "train", opts);
  opts.id_offset = static_cast<int64_t>(ds.train.size());
  ds.valid = load_jsonl(dir / "valid.jsonl", "valid", opts);
  opts.id_offset += static_cast<int64_t>(ds.valid.size());
  ds.test = load_jsonl(dir / "test.jsonl", "test", opts);
  if (num_labels) {
    ds.num_labels = *num_labels;
  } else {
    int max_label = -1;
    for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
      for (const auto& ex : *split) max_label = std::max(max_label, ex.label);
    }
    ds.num_labels = std::max(2, max_label + 1);
  }
  if (ds.num_labels < 2) throw std::runtime_error("need at least 2 labels");
  return ds;
}

CharTable::CharTable(std::vector<char32_t> chars) : chars_(std::move(chars)) {
  for (size_t i = 0; i < chars_.size(); ++i) {
    if (!index_.emplace(chars_[i], static_cast<int>(i) + 1).second) {
      throw std::invalid_argument("duplicate character in CharTable");
    }
  }
}

int CharTable::id(char32_t c) const {
  const auto it = index_.find(c);
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<int> CharTable::encode(std::u32string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char32_t c : text) ids.push_back(id(c));
  return ids;
}

CharTable build_char_table(std::span<const std::string> texts) {
  std::vector<char32_t> chars;
  std::unordered_map<char32_t, bool> seen;
  for (const auto& text : texts) {
    for (char32_t c : chars_of(text)) {
      if (seen.emplace(c, true).second) chars.push_back(c);
    }
  }
  return CharTable(std::move(chars));
}

CharTable build_char_table(std::span<const LabeledExample> train) {
  if (train.empty()) throw std::invalid_argument("empty training split");
  std::vector<std::string> texts;
  texts.reserve(train.size());
  for (const auto& ex : train) texts.push_back(ex.text);
  return build_char_table(std::span<const std::string>(texts));
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& pieces,
                       std::string continuation_prefix)
    : prefix_(std::move(continuation_prefix)),
      prefix_chars_(chars_of(prefix_)) {
  terminal_.push_back(-1);  // root
  tokens_.emplace_back(kUnkToken);
  index_.emplace(std::string(kUnkToken), kUnkId);
  for (const auto& piece : pieces) {
    if (piece.empty()) throw std::invalid_argument("empty vocabulary token");
    if (piece == kUnkToken) {
      throw std::invalid_argument("<unk> is reserved");
    }
    const int id = static_cast<int>(tokens_.size());
    if (!index_.emplace(piece, id).second) {
      throw std::invalid_argument("duplicate vocabulary token: " + piece);
    }
    tokens_.push_back(piece);
    const std::u32string chars = chars_of(piece);
    const int node = insert_path(chars);
    terminal_[node] = id;
    int surface = static_cast<int>(chars.size());
    if (!prefix_.empty() && piece.size() > prefix_.size() &&
        piece.compare(0, prefix_.size(), prefix_) == 0) {
      surface -= static_cast<int>(prefix_chars_.size());
    }
    max_token_chars_ = std::max(max_token_chars_, surface);
  }
}

int Vocabulary::lookup(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

int Vocabulary::child(int node, char32_t c) const {
  const auto it = edges_.find((static_cast<uint64_t>(node) << 21) | c);
  return it == edges_.end() ? -1 : it->second;
}

int Vocabulary::insert_path(std::u32string_view chars) {
  int node = 0;
  for (char32_t c : chars) {
    const uint64_t key = (static_cast<uint64_t>(node) << 21) | c;
    auto it = edges_.find(key);
    if (it == edges_.end()) {
      const int next = static_cast<int>(terminal_.size());
      terminal_.push_back(-1);
      it = edges_.emplace(key, next).first;
    }
    node = it->second;
  }
  return node;
}

int Vocabulary::span_id(std::u32string_view sentence, int start,
                        int end) const {
  int found = -1;
  for_each_match(sentence, start, [&](int e, int id) {
    if (e == end) found = id;
  });
  return found;
}

std::string Vocabulary::span_token(std::u32string_view sentence, int start,
                                   int end) const {
  std::string surface = to_utf8(sentence.substr(start, end - start));
  if (!prefix_.empty() && !is_word_start(sentence, start)) {
    return prefix_ + surface;
  }
  return surface;
}

}  // namespace retok
