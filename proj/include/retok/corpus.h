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

#ifndef RETOK_CORPUS_H_
#define RETOK_CORPUS_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "retok/utf8.h"

namespace retok {

struct LabeledExample {
  std::string text;
  int label = 0;
  int64_t id = 0;
};

struct Dataset {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> valid;
  std::vector<LabeledExample> test;
  int num_labels = 0;

  const std::vector<LabeledExample>& split(std::string_view name) const;
};

struct LoadOptions {
  // Labels are checked against this when set.
  std::optional<int> num_labels;
  bool nfkc = false;
  // Added to the sequential line index, so ids stay disjoint across splits.
  int64_t id_offset = 0;
};

// One JSON object per line: {"text": string, "label": integer}. Blank lines
// are skipped. Errors name the split and the 1-based line number.
std::vector<LabeledExample> load_jsonl(const std::filesystem::path& path,
                                       std::string_view split,
                                       const LoadOptions& options = {});

void save_jsonl(const std::filesystem::path& path,
                std::span<const LabeledExample> examples);

// Reads train.jsonl / valid.jsonl / test.jsonl from |dir|. num_labels is
// max label + 1 over all splits unless given.
Dataset load_dataset(const std::filesystem::path& dir,
                     std::optional<int> num_labels = std::nullopt,
                     bool nfkc = false);

// Character inventory of the training split. Id 0 is the unknown character;
// seen characters follow in first-occurrence order.
class CharTable {
 public:
  static constexpr int kUnkId = 0;

  CharTable() = default;
  explicit CharTable(std::vector<char32_t> chars);

  int id(char32_t c) const;
  bool contains(char32_t c) const { return index_.count(c) > 0; }
  int size() const { return static_cast<int>(chars_.size()) + 1; }
  // Seen characters only, without the unknown entry.
  const std::vector<char32_t>& chars() const { return chars_; }
  std::vector<int> encode(std::u32string_view text) const;

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> index_;
};

CharTable build_char_table(std::span<const LabeledExample> train);
CharTable build_char_table(std::span<const std::string> texts);

// Token inventory with dense ids. Id 0 is always "<unk>", which never matches
// sentence text. With a non-empty continuation prefix, spans that do not
// start a word are looked up as prefix + surface (WordPiece convention).
class Vocabulary {
 public:
  static constexpr int kUnkId = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  // |pieces| must be unique and non-empty and must not contain "<unk>".
  explicit Vocabulary(const std::vector<std::string>& pieces,
                      std::string continuation_prefix = "");

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // -1 when absent.
  int lookup(std::string_view token) const;
  bool contains(std::string_view token) const { return lookup(token) >= 0; }
  int max_token_chars() const { return max_token_chars_; }
  const std::string& continuation_prefix() const { return prefix_; }

  // Id of sentence[start, end) under the continuation convention, or -1.
  int span_id(std::u32string_view sentence, int start, int end) const;

  // Calls fn(end, id) for every in-vocabulary span starting at |start|, in
  // increasing end order.
  template <typename Fn>
  void for_each_match(std::u32string_view sentence, int start, Fn&& fn) const;

  // Surface-string form of a span as it would appear in this vocabulary.
  std::string span_token(std::u32string_view sentence, int start,
                         int end) const;

 private:
  int child(int node, char32_t c) const;
  int insert_path(std::u32string_view chars);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::string prefix_;
  std::u32string prefix_chars_;
  int max_token_chars_ = 0;

  // Character trie over token surfaces (prefix included).
  std::unordered_map<uint64_t, int> edges_;
  std::vector<int> terminal_;  // node -> token id or -1
};

template <typename Fn>
void Vocabulary::for_each_match(std::u32string_view sentence, int start,
                                Fn&& fn) const {
  const int n = static_cast<int>(sentence.size());
  int node = 0;
  if (!prefix_chars_.empty() && !is_word_start(sentence, start)) {
    for (char32_t c : prefix_chars_) {
      node = child(node, c);
      if (node < 0) return;
    }
  }
  for (int end = start + 1; end <= n && end - start <= max_token_chars_;
       ++end) {
    node = child(node, sentence[end - 1]);
    if (node < 0) return;
    if (terminal_[node] >= 0) fn(end, terminal_[node]);
  }
}

}  // namespace retok

#endif  // RETOK_CORPUS_H_
