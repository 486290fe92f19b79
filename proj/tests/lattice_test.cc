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

#include "retok/lattice.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "gtest/gtest.h"
#include "lattice_oracle.h"

namespace retok {
namespace {

using testing_oracle::brute_force;
using testing_oracle::four_path_lattice;
using testing_oracle::random_case;
using testing_oracle::RandomCase;

Lattice two_char_lattice() {
  const Vocabulary vocab({"a", "b", "ab"});
  return build_lattice(U"ab", vocab, [&](int i, int j, int) {
    return (j - i == 2) ? -1.5 : -1.0;
  });
}

TEST(LatticeTest, BuildEdges) {
  const Vocabulary vocab({"a", "b", "ab"});
  const Lattice l =
      build_lattice(U"ab", vocab, [](int, int, int) { return 0.0; });
  EXPECT_EQ(l.num_edges(), 3);
  EXPECT_NE(l.find_edge(0, 1), nullptr);
  EXPECT_NE(l.find_edge(1, 2), nullptr);
  EXPECT_EQ(l.find_edge(0, 2)->token_id, vocab.lookup("ab"));

  const Vocabulary only_ab({"ab"});
  const Lattice l2 =
      build_lattice(U"ab", only_ab, [](int, int, int) { return 0.0; });
  EXPECT_EQ(l2.num_edges(), 1);
  EXPECT_FALSE(l2.find_edge(0, 2)->fallback);
}

TEST(LatticeTest, FallbackConnectivity) {
  const Vocabulary empty;
  const Lattice l =
      build_lattice(U"xy", empty, [](int, int, int) { return 0.0; });
  ASSERT_EQ(l.num_edges(), 2);
  EXPECT_TRUE(l.find_edge(0, 1)->fallback);
  EXPECT_TRUE(l.find_edge(1, 2)->fallback);
  EXPECT_EQ(l.find_edge(0, 1)->token_id, Vocabulary::kUnkId);

  // Dead end after "ab": fallback needed at position 2 only.
  const Vocabulary v({"ab", "a"});
  const Lattice l3 =
      build_lattice(U"abd", v, [](int, int, int) { return 0.0; });
  EXPECT_TRUE(l3.find_edge(1, 2)->fallback);
  EXPECT_TRUE(l3.find_edge(2, 3)->fallback);
  EXPECT_EQ(viterbi_best(l3).spans.back(), (Span{2, 3}));
}

TEST(LatticeTest, EveryRandomLatticeIsConnected) {
  for (uint64_t seed = 0; seed < 300; ++seed) {
    const RandomCase c = random_case(seed, false);
    EXPECT_TRUE(viterbi_best(c.lattice).covers(c.lattice.length()));
  }
}

TEST(LatticeTest, ViterbiExamples) {
  EXPECT_EQ(viterbi_best(two_char_lattice()).spans,
            (std::vector<Span>{{0, 2}}));

  const Vocabulary full({"a", "b", "c", "ab", "bc", "abc"});
  const Lattice zero =
      build_lattice(U"abc", full, [](int, int, int) { return 0.0; });
  EXPECT_EQ(viterbi_best(zero).spans, (std::vector<Span>{{0, 3}}));

  const Vocabulary single({"abc"});
  const Lattice one =
      build_lattice(U"abc", single, [](int, int, int) { return -2.0; });
  EXPECT_EQ(viterbi_best(one).spans, (std::vector<Span>{{0, 3}}));
}

TEST(LatticeTest, NbestExamples) {
  const auto best = nbest(two_char_lattice(), 2);
  ASSERT_EQ(best.size(), 2u);
  EXPECT_EQ(best[0].segmentation.spans, (std::vector<Span>{{0, 2}}));
  EXPECT_EQ(best[1].segmentation.spans, (std::vector<Span>{{0, 1}, {1, 2}}));
  EXPECT_DOUBLE_EQ(best[0].score, -1.5);
  EXPECT_DOUBLE_EQ(best[1].score, -2.0);

  EXPECT_EQ(nbest(two_char_lattice(), 1)[0].segmentation,
            viterbi_best(two_char_lattice()));
  EXPECT_EQ(nbest(two_char_lattice(), 10).size(), 2u);
  EXPECT_THROW(nbest(two_char_lattice(), 0), std::invalid_argument);
}

TEST(LatticeTest, SearchMatchesBruteForce) {
  for (bool integer : {false, true}) {
    for (uint64_t seed = 0; seed < 1000; ++seed) {
      const RandomCase c = random_case(seed * 2 + integer, integer);
      const auto oracle = brute_force(c.lattice);
      ASSERT_FALSE(oracle.empty());
      ASSERT_EQ(viterbi_best(c.lattice), oracle[0].segmentation)
          << "seed " << seed;
      for (int k = 1; k <= 8; ++k) {
        const auto got = nbest(c.lattice, k);
        ASSERT_EQ(got.size(), std::min<size_t>(k, oracle.size()));
        for (size_t r = 0; r < got.size(); ++r) {
          ASSERT_EQ(got[r].segmentation, oracle[r].segmentation)
              << "seed " << seed << " k " << k << " rank " << r;
          ASSERT_EQ(got[r].score, oracle[r].score);
        }
      }
    }
  }
}

TEST(LatticeTest, ScoreMatchesSearch) {
  const RandomCase c = random_case(42, false);
  for (const auto& item : nbest(c.lattice, 5)) {
    EXPECT_EQ(c.lattice.score(item.segmentation), item.score);
  }
}

TEST(EnumerateTest, Examples) {
  const Vocabulary full({"a", "b", "c", "ab", "bc", "abc"});
  EXPECT_EQ(enumerate_all(U"abc", full, 12).size(), 4u);  // 2^(3-1)
  const Vocabulary only_ab({"ab"});
  EXPECT_EQ(enumerate_all(U"ab", only_ab, 12).size(), 1u);
  EXPECT_THROW(enumerate_all(std::u32string(13, U'a'), full, 12),
               std::length_error);
  EXPECT_THROW(enumerate_all(U"a", full, 17), std::invalid_argument);
}

TEST(EnumerateTest, FullVocabularyCountIsPowerOfTwo) {
  for (int n = 1; n <= 12; ++n) {
    std::u32string s;
    for (int i = 0; i < n; ++i) s.push_back(U'a' + i);
    std::vector<std::string> pieces;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j <= n; ++j) pieces.push_back(to_utf8(s.substr(i, j - i)));
    }
    const Vocabulary vocab(pieces);
    EXPECT_EQ(enumerate_all(s, vocab, 16).size(), size_t{1} << (n - 1));
  }
}

std::vector<double> enumerated_posterior(const Lattice& l, double alpha,
                                         std::vector<Segmentation>* paths) {
  const auto all = brute_force(l);
  double z = 0.0;
  for (const auto& p : all) z += std::exp(alpha * p.score);
  std::vector<double> post;
  paths->clear();
  for (const auto& p : all) {
    post.push_back(std::exp(alpha * p.score) / z);
    paths->push_back(p.segmentation);
  }
  return post;
}

std::vector<double> sample_frequencies(const Lattice& l, double alpha,
                                       const std::vector<Segmentation>& paths,
                                       int draws, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> freq(paths.size(), 0.0);
  for (int d = 0; d < draws; ++d) {
    const Segmentation s = sample_segmentation(l, alpha, rng);
    const auto it = std::find(paths.begin(), paths.end(), s);
    EXPECT_NE(it, paths.end());
    freq[it - paths.begin()] += 1.0 / draws;
  }
  return freq;
}

TEST(SamplingTest, UniformAtAlphaZero) {
  const Vocabulary vocab({"a", "b", "ab"});
  const Lattice l = build_lattice(U"ab", vocab, [](int, int j, int) {
    return j == 2 ? -7.0 : -1.0;
  });
  std::vector<Segmentation> paths;
  enumerated_posterior(l, 0.0, &paths);
  const auto freq = sample_frequencies(l, 0.0, paths, 10000, 3);
  for (double f : freq) EXPECT_NEAR(f, 0.5, 0.03);
}

TEST(SamplingTest, ChiSquareUniformFourPaths) {
  const Lattice l = four_path_lattice();
  std::vector<Segmentation> paths;
  enumerated_posterior(l, 0.0, &paths);
  ASSERT_EQ(paths.size(), 4u);
  const int draws = 20000;
  const auto freq = sample_frequencies(l, 0.0, paths, draws, 11);
  double chi2 = 0.0;
  for (double f : freq) {
    const double observed = f * draws;
    const double expected = draws / 4.0;
    chi2 += (observed - expected) * (observed - expected) / expected;
  }
  EXPECT_LT(chi2, 16.266);  // chi-square(3) at significance 0.001
}

TEST(SamplingTest, MatchesPosteriorAtAlphaOne) {
  const Lattice l = four_path_lattice();
  std::vector<Segmentation> paths;
  const auto post = enumerated_posterior(l, 1.0, &paths);
  const auto freq = sample_frequencies(l, 1.0, paths, 20000, 5);
  double tv = 0.0;
  for (size_t i = 0; i < post.size(); ++i) tv += 0.5 * std::abs(post[i] - freq[i]);
  EXPECT_LT(tv, 0.02);
}

TEST(SamplingTest, LargeAlphaConcentratesOnViterbi) {
  const Lattice l = four_path_lattice();
  std::vector<Segmentation> paths;
  const auto post = enumerated_posterior(l, 50.0, &paths);
  EXPECT_GT(post[0], 0.99);
  EXPECT_EQ(paths[0], viterbi_best(l));
  const auto freq = sample_frequencies(l, 50.0, paths, 2000, 9);
  EXPECT_GT(freq[0], 0.98);
}

TEST(SamplingTest, Reproducible) {
  const Lattice l = four_path_lattice();
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(sample_segmentation(l, 0.7, a), sample_segmentation(l, 0.7, b));
  }
}

TEST(SamplingTest, LogPartitionMatchesEnumeration) {
  const Lattice l = four_path_lattice();
  double z = 0.0;
  for (const auto& p : brute_force(l)) z += std::exp(0.5 * p.score);
  EXPECT_NEAR(log_partition(l, 0.5), std::log(z), 1e-12);
}

TEST(SamplingTest, EdgePosteriorsMatchEnumeration) {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const RandomCase c = random_case(seed, false);
    const auto post = edge_posteriors(c.lattice, 0.8);
    const auto all = brute_force(c.lattice);
    double z = 0.0;
    for (const auto& p : all) z += std::exp(0.8 * p.score);
    for (int i = 0; i < c.lattice.length(); ++i) {
      const auto& out = c.lattice.edges_from(i);
      for (size_t k = 0; k < out.size(); ++k) {
        double mass = 0.0;
        for (const auto& p : all) {
          const auto& spans = p.segmentation.spans;
          if (std::find(spans.begin(), spans.end(), Span{i, out[k].end}) !=
              spans.end()) {
            mass += std::exp(0.8 * p.score) / z;
          }
        }
        EXPECT_NEAR(post[i][k], mass, 1e-10);
      }
    }
  }
}

TEST(SegmentationTest, BiTags) {
  const auto seg = segmentation_from_lengths({2, 1});
  EXPECT_EQ(to_bi_tags(seg), (std::vector<bool>{true, false, true}));
  EXPECT_EQ(from_bi_tags({true, true, true}),
            segmentation_from_lengths({1, 1, 1}));
  EXPECT_EQ(from_bi_tags(to_bi_tags(seg)), seg);
  EXPECT_EQ(segmentation_from_tokens(U"abc", {"ab", "c"}), seg);
  EXPECT_THROW(segmentation_from_tokens(U"abc", {"ab"}), std::invalid_argument);
  EXPECT_EQ(seg.tokens(U"abc"), (std::vector<std::string>{"ab", "c"}));
}

TEST(RenderTest, Triangle) {
  const std::string out = render_lattice(two_char_lattice(), U"ab");
  EXPECT_NE(out.find("-1.50"), std::string::npos);
  EXPECT_NE(out.find("-1.00"), std::string::npos);
}

}  // namespace
}  // namespace retok
