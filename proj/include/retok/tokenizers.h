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

#ifndef RETOK_TOKENIZERS_H_
#define RETOK_TOKENIZERS_H_

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "retok/corpus.h"
#include "retok/lattice.h"
#include "retok/rng.h"

namespace retok {

// ---------------------------------------------------------------------------
// Unigram language model tokenizer.

struct UnigramTrainerOptions {
  int max_piece_chars = 8;
  int min_frequency = 2;
  // Seed vocabulary is capped at seed_cap_factor * target pieces.
  double seed_cap_factor = 20.0;
  // Fraction of prunable pieces removed per pruning round.
  double prune_fraction = 0.2;
  int em_iterations = 2;
};

class UnigramModel {
 public:
  UnigramModel() = default;
  // |pieces| excludes "<unk>"; |log_probs| is aligned with |pieces|.
  UnigramModel(const std::vector<std::string>& pieces,
               std::vector<double> log_probs,
               std::string continuation_prefix = "");

  const Vocabulary& vocab() const { return vocab_; }
  // Indexed by vocabulary id; entry 0 is the UNK penalty score.
  const std::vector<double>& log_probs() const { return log_probs_; }
  double log_prob(int id) const { return log_probs_.at(id); }
  // Score given to single-character fallback edges.
  double unk_score() const { return log_probs_[Vocabulary::kUnkId]; }

  Lattice lattice(std::u32string_view sentence) const;

 private:
  Vocabulary vocab_;
  std::vector<double> log_probs_;
};

// EM training over a lattice of seed substrings, pruning the pieces whose
// removal costs the least likelihood until |target_vocab_size| (counting
// "<unk>") is reached. Every character of the corpus is kept.
UnigramModel unigram_train(std::span<const std::string> corpus,
                           int target_vocab_size,
                           const UnigramTrainerOptions& options = {});

Segmentation unigram_encode(const UnigramModel& model,
                            std::u32string_view sentence);
std::vector<ScoredSegmentation> unigram_nbest(const UnigramModel& model,
                                              std::u32string_view sentence,
                                              int n);
Segmentation unigram_sample(const UnigramModel& model,
                            std::u32string_view sentence, double alpha,
                            Rng& rng);

// ---------------------------------------------------------------------------
// Byte-pair encoding over characters.

struct BpeMerge {
  std::string left;
  std::string right;
  std::string merged;

  friend bool operator==(const BpeMerge&, const BpeMerge&) = default;
};

class BpeModel {
 public:
  BpeModel() = default;
  BpeModel(std::vector<std::string> alphabet, std::vector<BpeMerge> merges);

  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<std::string>& alphabet() const { return alphabet_; }
  const std::vector<BpeMerge>& merges() const { return merges_; }
  // Rank of merging (left id, right id), or -1.
  int merge_rank(int left, int right) const;
  // Vocabulary id produced by merge |rank|.
  int merge_result(int rank) const { return merge_ids_[rank]; }

 private:
  std::vector<std::string> alphabet_;
  std::vector<BpeMerge> merges_;
  Vocabulary vocab_;
  std::map<std::pair<int, int>, int> rank_;
  std::vector<int> merge_ids_;
};

// Greedy most-frequent-pair merging until the vocabulary (excluding
// "<unk>") holds |target_vocab_size| pieces. Count ties go to the
// lexicographically smallest (left, right). Pairs never span whitespace.
BpeModel bpe_train(std::span<const std::string> corpus, int target_vocab_size);

// Applies merges lowest rank first (leftmost among equal ranks). Each
// candidate merge is skipped with probability |dropout_p| at every step.
Segmentation bpe_encode(const BpeModel& model, std::u32string_view sentence,
                        double dropout_p, Rng& rng);
Segmentation bpe_encode(const BpeModel& model, std::u32string_view sentence);

// ---------------------------------------------------------------------------
// Greedy longest-match (WordPiece-style) tokenizer.

inline constexpr std::string_view kDefaultContinuationPrefix = "##";

class MaxMatchModel {
 public:
  MaxMatchModel() = default;
  explicit MaxMatchModel(Vocabulary vocab) : vocab_(std::move(vocab)) {}

  const Vocabulary& vocab() const { return vocab_; }

 private:
  Vocabulary vocab_;
};

// Vocabulary from bpe_train at the same target; pieces seen word-internally
// get the continuation prefix. All characters appear in both forms.
MaxMatchModel maxmatch_build(
    std::span<const std::string> corpus, int target_vocab_size,
    std::string continuation_prefix = std::string(kDefaultContinuationPrefix));

// Left-to-right longest match. With probability |dropout_p| a multi-char
// match is rejected and the next shorter one is tried; single characters are
// always accepted. Unknown characters become single UNK spans.
Segmentation maxmatch_encode(const MaxMatchModel& model,
                             std::u32string_view sentence, double dropout_p,
                             Rng& rng);
Segmentation maxmatch_encode(const MaxMatchModel& model,
                             std::u32string_view sentence);

// ---------------------------------------------------------------------------
// Common interface over the three kinds.

enum class TokenizerKind { kUnigram, kBpe, kMaxMatch };

std::string_view kind_name(TokenizerKind kind);
TokenizerKind parse_kind(std::string_view name);

struct SamplingOptions {
  double alpha = 0.2;      // unigram temperature
  double dropout_p = 0.1;  // BPE / MaxMatch dropout
};

class Tokenizer {
 public:
  using Model = std::variant<UnigramModel, BpeModel, MaxMatchModel>;

  Tokenizer() = default;
  explicit Tokenizer(Model model) : model_(std::move(model)) {}

  TokenizerKind kind() const {
    return static_cast<TokenizerKind>(model_.index());
  }
  const Model& model() const { return model_; }
  const Vocabulary& vocab() const;

  // Deterministic tokenization (Viterbi, plain BPE or plain max-match).
  Segmentation encode(std::u32string_view sentence) const;
  // Subword-regularized draw.
  Segmentation sample(std::u32string_view sentence,
                      const SamplingOptions& options, Rng& rng) const;

 private:
  Model model_;
};

Tokenizer train_tokenizer(TokenizerKind kind,
                          std::span<const std::string> corpus,
                          int target_vocab_size);

// Vocabulary ids of each span; out-of-vocabulary spans map to UNK.
std::vector<int> token_ids(const Vocabulary& vocab,
                           std::u32string_view sentence,
                           const Segmentation& seg);

inline constexpr int kTokenizerFormatVersion = 1;

// JSON document with sorted keys and a trailing newline.
std::string serialize_tokenizer(const Tokenizer& tokenizer);
Tokenizer parse_tokenizer(std::string_view text);
void save_tokenizer(const Tokenizer& tokenizer,
                    const std::filesystem::path& path);
Tokenizer load_tokenizer(const std::filesystem::path& path);

}  // namespace retok

#endif  // RETOK_TOKENIZERS_H_
