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

// Brute-force search oracle and random lattices shared by the lattice tests
// and the acceptance run.

#ifndef RETOK_TESTS_LATTICE_ORACLE_H_
#define RETOK_TESTS_LATTICE_ORACLE_H_

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "retok/corpus.h"
#include "retok/lattice.h"
#include "retok/rng.h"
#include "retok/utf8.h"

namespace retok {
namespace testing_oracle {

// Independent oracle: every composition of n characters, filtered by edge
// existence, scored right to left, ordered by score then longer-first span.
inline std::vector<ScoredSegmentation> brute_force(const Lattice& lattice) {
  const int n = lattice.length();
  std::vector<ScoredSegmentation> all;
  for (uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
    Segmentation seg;
    int start = 0;
    for (int k = 1; k <= n; ++k) {
      if (k == n || (mask >> (k - 1)) & 1u) {
        seg.spans.push_back({start, k});
        start = k;
      }
    }
    bool ok = true;
    double score = 0.0;
    for (auto it = seg.spans.rbegin(); it != seg.spans.rend(); ++it) {
      const Edge* e = lattice.find_edge(it->start, it->end);
      if (e == nullptr) {
        ok = false;
        break;
      }
      score = e->weight + score;
    }
    if (ok) all.push_back({seg, score});
  }
  std::sort(all.begin(), all.end(),
            [](const ScoredSegmentation& a, const ScoredSegmentation& b) {
              if (a.score != b.score) return a.score > b.score;
              const auto& x = a.segmentation.spans;
              const auto& y = b.segmentation.spans;
              for (size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
                if (x[i].end != y[i].end) return x[i].end > y[i].end;
              }
              return false;
            });
  return all;
}

struct RandomCase {
  std::u32string sentence;
  Vocabulary vocab;
  Lattice lattice;
};

// Random sentence over {a,b,c}, random vocabulary of its substrings and
// random weights; integer weights make exact ties common.
inline RandomCase random_case(uint64_t seed, bool integer_weights) {
  Rng rng(seed);
  const int n = 1 + static_cast<int>(rng.below(10));
  std::u32string s;
  for (int i = 0; i < n; ++i) s.push_back(U'a' + rng.below(3));
  std::set<std::string> pieces;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j <= n && j - i <= 4; ++j) {
      if (rng.bernoulli(0.5)) pieces.insert(to_utf8(s.substr(i, j - i)));
    }
  }
  Vocabulary vocab(std::vector<std::string>(pieces.begin(), pieces.end()));
  std::map<std::pair<int, int>, double> w;
  const auto weights = [&](int i, int j, int) {
    auto it = w.find({i, j});
    if (it == w.end()) {
      const double v = integer_weights
                           ? -static_cast<double>(rng.below(4))
                           : -5.0 * rng.uniform();
      it = w.emplace(std::make_pair(i, j), v).first;
    }
    return it->second;
  };
  Lattice lattice = build_lattice(s, vocab, weights);
  return {s, std::move(vocab), std::move(lattice)};
}

// Four paths over "abc": [abc], [a,bc], [ab,c], [a,b,c].
inline Lattice four_path_lattice() {
  const Vocabulary vocab({"a", "b", "c", "ab", "bc", "abc"});
  return build_lattice(U"abc", vocab, [](int i, int j, int) {
    return -0.3 * (j - i) - 0.2 * i + (j - i == 3 ? 0.4 : 0.0);
  });
}

}  // namespace testing_oracle
}  // namespace retok

#endif  // RETOK_TESTS_LATTICE_ORACLE_H_
