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

#ifndef RETOK_LATTICE_H_
#define RETOK_LATTICE_H_

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "retok/corpus.h"
#include "retok/rng.h"

namespace retok {

// Half-open character range [start, end).
struct Span {
  int start = 0;
  int end = 0;

  int length() const { return end - start; }
  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
};

// Ordered, contiguous spans covering a whole sentence.
struct Segmentation {
  std::vector<Span> spans;

  int size() const { return static_cast<int>(spans.size()); }
  bool empty() const { return spans.empty(); }
  // Surface strings of each span.
  std::vector<std::string> tokens(std::u32string_view sentence) const;
  // True when spans are contiguous and cover [0, length).
  bool covers(int length) const;

  friend bool operator==(const Segmentation&, const Segmentation&) = default;
  friend auto operator<=>(const Segmentation&, const Segmentation&) = default;
};

// Builds a segmentation from surface tokens; throws if they do not
// concatenate to |sentence|.
Segmentation segmentation_from_tokens(std::u32string_view sentence,
                                      const std::vector<std::string>& tokens);
Segmentation segmentation_from_lengths(const std::vector<int>& lengths);

// Per-character B/I tags (true = B).
std::vector<bool> to_bi_tags(const Segmentation& seg);
Segmentation from_bi_tags(const std::vector<bool>& tags);

// Log-domain edge weight for (start, end, token id). Fallback edges are
// queried with Vocabulary::kUnkId.
using WeightFn = std::function<double(int start, int end, int token_id)>;

struct Edge {
  int end = 0;
  int token_id = 0;
  double weight = 0.0;
  bool fallback = false;
};

class Lattice {
 public:
  Lattice() = default;
  explicit Lattice(int length) : edges_(length) {}

  int length() const { return static_cast<int>(edges_.size()); }
  // Outgoing edges of |start| sorted by end.
  const std::vector<Edge>& edges_from(int start) const {
    return edges_[start];
  }
  void add_edge(int start, Edge edge);
  int num_edges() const;
  // Sum of edge weights along |seg|, accumulated right to left (the same
  // order the searches use). Throws if a span has no edge.
  double score(const Segmentation& seg) const;
  const Edge* find_edge(int start, int end) const;

 private:
  std::vector<std::vector<Edge>> edges_;
};

// In-vocabulary spans up to vocab.max_token_chars(), plus single-character
// UNK fallbacks at every reachable position that has no outgoing edge, which
// guarantees a path from 0 to |sentence|.
Lattice build_lattice(std::u32string_view sentence, const Vocabulary& vocab,
                      const WeightFn& weights);

// Maximum-weight path. Ties prefer the longer span at the first position
// where two paths differ.
Segmentation viterbi_best(const Lattice& lattice);

struct ScoredSegmentation {
  Segmentation segmentation;
  double score = 0.0;
};

// Exact k-best paths in non-increasing score order under the same tie-break
// as viterbi_best. Returns fewer than |n| when fewer paths exist.
std::vector<ScoredSegmentation> nbest(const Lattice& lattice, int n);

// Exact draw from P(path) proportional to exp(alpha * score) by forward
// filtering, backward sampling.
Segmentation sample_segmentation(const Lattice& lattice, double alpha,
                                 Rng& rng);

// Log partition function log sum_path exp(alpha * score).
double log_partition(const Lattice& lattice, double alpha);

// Posterior probability of each edge under P(path) proportional to
// exp(alpha * score); result[i][k] belongs to edges_from(i)[k].
std::vector<std::vector<double>> edge_posteriors(const Lattice& lattice,
                                                 double alpha = 1.0);

inline constexpr int kMaxEnumerationChars = 16;

// Every path through the (fallback-augmented) vocabulary lattice. Refuses
// sentences longer than |max_len| or max_len > kMaxEnumerationChars.
std::vector<Segmentation> enumerate_all(std::u32string_view sentence,
                                        const Vocabulary& vocab, int max_len);

// Upper-triangular text rendering: row = start char, column = end char,
// cell = weight (or "." when absent, "?" for fallback edges).
std::string render_lattice(const Lattice& lattice,
                           std::u32string_view sentence);

}  // namespace retok

#endif  // RETOK_LATTICE_H_
