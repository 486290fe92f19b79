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

#ifndef RETOK_RETOK_H_
#define RETOK_RETOK_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "retok/autodiff.h"
#include "retok/classifier.h"
#include "retok/corpus.h"
#include "retok/lattice.h"
#include "retok/nn.h"
#include "retok/rng.h"
#include "retok/tokenizers.h"

namespace retok {

// ---------------------------------------------------------------------------
// Candidate collection.

enum class CandidateMode { kNbest, kSample };

std::string_view mode_name(CandidateMode mode);
CandidateMode parse_mode(std::string_view name);

struct Candidate {
  Segmentation segmentation;
  double loss = 0.0;
  // N-best rank, or the sampling attempt that produced it (0 = deterministic).
  int origin = 0;
};

struct CandidateSet {
  int64_t sentence_id = 0;
  int n_requested = 0;
  std::vector<Candidate> candidates;
};

// Candidate 0 is always the deterministic tokenization. Unigram tokenizers in
// nbest mode use exact n-best; everything else draws samples (temperature
// alpha or dropout p) until n distinct candidates or 5n attempts. The draws
// for a smaller n are a prefix of those for a larger n, so candidate sets
// nest across n for a fixed rng.
CandidateSet generate_candidates(std::u32string_view sentence,
                                 const Tokenizer& tokenizer, int n,
                                 CandidateMode mode,
                                 const SamplingOptions& sampling, Rng& rng);

// Argmin of the filled losses; ties go to the lower index.
int select_best(const CandidateSet& set);

struct RetokRecord {
  int64_t id = 0;
  std::string text;
  Segmentation segmentation;
  double loss = 0.0;
  int label = 0;
  int n_candidates = 0;
};

struct CollectOptions {
  int n = 100;
  CandidateMode mode = CandidateMode::kNbest;
  SamplingOptions sampling;
  uint64_t seed = 0;
  int threads = 1;
};

struct CollectResult {
  std::vector<RetokRecord> records;
  // Loss of candidate 0 (the deterministic tokenization) per record.
  std::vector<double> base_losses;
};

// Minimum-loss candidate per sentence under the frozen classifier. The rng
// for a sentence is the named stream ("candidates", sentence id).
CollectResult collect_best(std::span<const LabeledExample> examples,
                           const ClassifierModel& model,
                           const Tokenizer& tokenizer,
                           const CollectOptions& options);

struct OracleResult {
  std::vector<Segmentation> chosen;
  std::vector<int> predictions;
  std::vector<int> base_predictions;
  double f1 = 0.0;       // with the chosen candidates
  double base_f1 = 0.0;  // with candidate 0
};

// collect_best mechanics on a labeled evaluation split, reporting the
// resulting macro-F1 (an upper bound for any tokenizer over the candidates).
OracleResult oracle_select(std::span<const LabeledExample> examples,
                           const ClassifierModel& model,
                           const Tokenizer& tokenizer,
                           const CollectOptions& options);

// JSONL, one record per line with keys id, text, tokens, spans, loss, label,
// n_candidates.
void save_retok_dataset(std::span<const RetokRecord> records,
                        const std::filesystem::path& path);
std::vector<RetokRecord> load_retok_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Trainable tokenizers over the harvested data.

struct NeuralTokenizerConfig {
  int char_dim = 128;
  int hidden = 256;      // per direction
  int mlp_hidden = 256;  // span MLPs only
  int proj_dim = 128;    // span MLPs only
  int epochs = 200;
  double lr = 1e-3;
  int batch_size = 16;
  double clip_norm = 5.0;
  bool early_stop = true;
  int patience = 20;
  // Extension, off by default: also push down sampled absent spans.
  bool negative_sampling = false;
  int negatives_per_sentence = 4;
};

nlohmann::json to_json(const NeuralTokenizerConfig& config);
NeuralTokenizerConfig neural_config_from_json(const nlohmann::json& j,
                                              const std::string& path = "");

struct TokenizerEpoch {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // BI-tag accuracy on the training records
};

// Span-scoring tokenizer restricted to a vocabulary: p(i, j) =
// sigmoid(MLP_begin(h_i) . MLP_end(h_{j-1})) for in-vocabulary spans.
class SpanTokenizer {
 public:
  SpanTokenizer() = default;
  SpanTokenizer(const NeuralTokenizerConfig& config, Vocabulary vocab,
                CharTable chars, uint64_t seed);

  const NeuralTokenizerConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const CharTable& chars() const { return chars_; }
  const ad::ParamSet& params() const { return params_; }
  ad::ParamSet& mutable_params() { return params_; }

  // T x T logits; cell (i, j) scores span [i, j + 1).
  ad::Var span_logits(nn::Binder& bind, std::u32string_view sentence) const;

 private:
  NeuralTokenizerConfig config_;
  Vocabulary vocab_;
  CharTable chars_;
  ad::ParamSet params_;
  size_t embedding_ = 0;
  nn::BiLstmParams encoder_;
  nn::MlpParams begin_;
  nn::MlpParams end_;
};

struct SpanProb {
  int start = 0;
  int end = 0;
  double prob = 0.0;
};

// Probabilities of all in-vocabulary spans up to the vocabulary's longest
// token, ordered by (start, end). Other spans are absent.
std::vector<SpanProb> span_scores(const SpanTokenizer& tok,
                                  std::u32string_view sentence);

// -sum over gold spans of log p. Single-character spans outside the
// vocabulary contribute zero; longer ones are an error.
ad::Var span_tokenizer_loss(nn::Binder& bind, const SpanTokenizer& tok,
                            std::u32string_view sentence,
                            const Segmentation& gold);
double span_tokenizer_loss(const SpanTokenizer& tok,
                           std::u32string_view sentence,
                           const Segmentation& gold);

// Viterbi over log p; unknown characters get fallback weight log 0.5.
Segmentation span_tokenize(const SpanTokenizer& tok,
                           std::u32string_view sentence);

struct SpanTrainResult {
  SpanTokenizer model;
  std::vector<TokenizerEpoch> log;
};

SpanTrainResult train_span_tokenizer(std::span<const RetokRecord> records,
                                     const Vocabulary& vocab,
                                     const CharTable& chars,
                                     const NeuralTokenizerConfig& config,
                                     uint64_t seed);

// BiLSTM-CRF character tagger over tags {B = 0, I = 1}. Unrestricted: it can
// emit tokens outside any vocabulary.
class BiTagTokenizer {
 public:
  BiTagTokenizer() = default;
  BiTagTokenizer(const NeuralTokenizerConfig& config, CharTable chars,
                 uint64_t seed);

  const NeuralTokenizerConfig& config() const { return config_; }
  const CharTable& chars() const { return chars_; }
  const ad::ParamSet& params() const { return params_; }
  ad::ParamSet& mutable_params() { return params_; }

  // T x 2 emission scores and the 2 x 2 transition matrix.
  ad::Var emissions(nn::Binder& bind, std::u32string_view sentence) const;
  ad::Var transitions(nn::Binder& bind) const { return bind(transitions_); }

 private:
  NeuralTokenizerConfig config_;
  CharTable chars_;
  ad::ParamSet params_;
  size_t embedding_ = 0;
  nn::BiLstmParams encoder_;
  nn::MlpParams emit_;
  size_t transitions_ = 0;
};

double bitag_loss(const BiTagTokenizer& tok, std::u32string_view sentence,
                  const Segmentation& gold);
Segmentation bitag_tokenize(const BiTagTokenizer& tok,
                            std::u32string_view sentence);

struct BiTagTrainResult {
  BiTagTokenizer model;
  std::vector<TokenizerEpoch> log;
};

BiTagTrainResult train_bitag(std::span<const RetokRecord> records,
                             const CharTable& chars,
                             const NeuralTokenizerConfig& config,
                             uint64_t seed);

// Relative token frequencies of the records (tokens in the vocabulary's
// continuation form), plus a 0.5 count for every known character in each
// form the vocabulary uses. Multi-character tokens outside |vocab| are
// skipped.
UnigramModel build_unigram_opt(std::span<const RetokRecord> records,
                               const Vocabulary& vocab, const CharTable& chars);

inline constexpr double kBackoffCount = 0.5;

// Persistence: <base>.json sidecar (kind, config, vocabulary, characters)
// plus <base>.weights.json / <base>.weights.bin.
void save_span_tokenizer(const SpanTokenizer& tok,
                         const std::filesystem::path& base);
SpanTokenizer load_span_tokenizer(const std::filesystem::path& base);
void save_bitag_tokenizer(const BiTagTokenizer& tok,
                          const std::filesystem::path& base);
BiTagTokenizer load_bitag_tokenizer(const std::filesystem::path& base);

}  // namespace retok

#endif  // RETOK_RETOK_H_
