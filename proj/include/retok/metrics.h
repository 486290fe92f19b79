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

#ifndef RETOK_METRICS_H_
#define RETOK_METRICS_H_

#include <map>
#include <span>
#include <string>
#include <vector>

#include "retok/corpus.h"
#include "retok/lattice.h"

namespace retok {

// Per-label F1; labels absent from both sides are NaN.
std::vector<double> per_label_f1(std::span<const int> predictions,
                                 std::span<const int> gold, int num_labels);

// Unweighted mean of per-label F1 over labels that occur in the gold or the
// predictions. Throws on empty or mismatched input.
double macro_f1(std::span<const int> predictions, std::span<const int> gold,
                int num_labels);

// Fraction of characters whose B/I tags agree.
double bi_tag_accuracy(const Segmentation& hyp, const Segmentation& ref);
// Character-level (micro) accuracy over a corpus.
double bi_tag_accuracy(std::span<const Segmentation> hyps,
                       std::span<const Segmentation> refs);

// Tokens outside |vocab| over all tokens. With |known_chars| set, single
// characters missing from it are not counted as unknown.
double unk_ratio(std::span<const std::u32string> sentences,
                 std::span<const Segmentation> segmentations,
                 const Vocabulary& vocab,
                 const CharTable* known_chars = nullptr);

double avg_tokens(std::span<const Segmentation> segmentations);

// exp of the entropy of the empirical token distribution.
double unigram_perplexity(std::span<const std::u32string> sentences,
                          std::span<const Segmentation> segmentations);

// Metric values per method, plus metadata. Rendered as JSON (sorted keys)
// or as a text table with methods as columns.
struct EvalReport {
  std::map<std::string, std::string> metadata;
  std::vector<std::string> methods;  // column order
  std::map<std::string, std::map<std::string, double>> values;  // metric -> method
  std::map<std::string, std::vector<double>> per_label_f1;  // method -> F1s

  void set(const std::string& metric, const std::string& method, double v);
  std::string to_json() const;
  std::string to_table() const;
};

}  // namespace retok

#endif  // RETOK_METRICS_H_
