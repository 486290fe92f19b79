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

#ifndef RETOK_PIPELINE_H_
#define RETOK_PIPELINE_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "retok/classifier.h"
#include "retok/corpus.h"
#include "retok/metrics.h"
#include "retok/retok.h"
#include "retok/tokenizers.h"

namespace retok {

// An upstream artifact is absent or out of date. The message names the
// command that produces it.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Synthetic corpus with planted segmentation ambiguity.

struct SynthSpec {
  int train = 2000;
  int valid = 500;
  int test = 500;
  int alphabet = 10;  // letters 'a', 'b', ...
  int num_pieces = 30;
  int signals_per_label = 6;
  // Signal words are ordered pairs drawn from this many top-ranked pieces.
  int signal_pieces = 4;
  int num_labels = 2;
  int min_words = 4;
  int max_words = 9;
  // Fraction of sentences that carry a signal word; the others get a random
  // label.
  double signal_rate = 0.85;
  // Zipf exponent of the piece distribution. Signal pieces take the most
  // frequent ranks, so the split reading of a signal is often the likelier
  // one under a unigram LM trained on the corpus.
  double zipf = 2.0;
  double label_noise = 0.05;
};

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j,
                               const std::string& path = "");

struct SynthCorpus {
  SynthSpec spec;
  Dataset data;
  std::vector<std::string> pieces;
  // signals[label] lists (signal word, first piece, second piece).
  std::vector<std::vector<std::array<std::string, 3>>> signals;
};

SynthCorpus generate_synth(const SynthSpec& spec, uint64_t seed);
// train/valid/test.jsonl plus synth.json describing the planted signals.
void write_synth(const SynthCorpus& corpus, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Experiment configuration.

enum class OptKind { kSpan, kBiTag, kUnigramOpt };

std::string_view opt_name(OptKind kind);
OptKind parse_opt(std::string_view name);

struct ExperimentConfig {
  std::filesystem::path dataset_dir = "data";
  bool nfkc = false;
  TokenizerKind tokenizer = TokenizerKind::kUnigram;
  int vocab_size = 800;
  ClassifierConfig classifier;
  int n = 25;
  CandidateMode mode = CandidateMode::kNbest;
  SamplingOptions sampling;
  std::vector<OptKind> opt = {OptKind::kSpan, OptKind::kBiTag,
                              OptKind::kUnigramOpt};
  NeuralTokenizerConfig neural;
  std::vector<uint64_t> seeds = {1, 2, 3};
  std::vector<int> sweep_n = {1, 3, 10, 25};
  int threads = 1;
};

inline constexpr int kConfigVersion = 1;

nlohmann::json to_json(const ExperimentConfig& config);
// Strict schema: unknown keys, wrong types and out-of-range values throw
// ConfigError naming the field. Relative dataset_dir is resolved against
// |base_dir|.
ExperimentConfig experiment_config_from_json(
    const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Artifacts.

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

// Stages files in a hidden directory and renames them into place on commit,
// so readers never see a partial stage output.
class Staging {
 public:
  explicit Staging(std::filesystem::path dir);
  ~Staging();
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;

  // Path inside the staging area for a file that will land at dir/name.
  std::filesystem::path path(const std::string& name) const;
  void write(const std::string& name, std::string_view contents);
  // Moves every staged file into place; returns their final paths.
  std::vector<std::filesystem::path> commit();

 private:
  std::filesystem::path dir_;
  std::filesystem::path tmp_;
  bool committed_ = false;
};

struct RunManifest {
  std::string command;
  std::optional<uint64_t> seed;
  nlohmann::json config;
  std::map<std::string, std::string> inputs;   // path relative to out -> sha256
  std::map<std::string, std::string> outputs;  // path relative to out -> sha256
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

inline constexpr std::string_view kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Stages. Every stage is idempotent for identical inputs and seed; outputs
// go under |out| (per-seed files under out/seed-<s>/) and each stage writes
// <stage>.manifest.json next to them.

struct StageOptions {
  std::filesystem::path out;
  int threads = 1;
  bool force = false;  // accept stale upstream artifacts
  bool quiet = false;
};

struct Layout {
  std::filesystem::path out;

  std::filesystem::path tokenizer() const { return out / "tokenizer.json"; }
  std::filesystem::path seed_dir(uint64_t seed) const;
  std::filesystem::path classifier(uint64_t seed) const;  // base path
  std::filesystem::path dhat(uint64_t seed) const;
  std::filesystem::path opt(uint64_t seed, OptKind kind) const;  // base path
  std::filesystem::path manifest(const std::filesystem::path& dir,
                                 const std::string& stage) const;
};

void run_train_tokenizer(const ExperimentConfig& config,
                         const StageOptions& options);
// Returns the best valid macro-F1.
double run_train_downstream(const ExperimentConfig& config, uint64_t seed,
                            const StageOptions& options);
void run_collect(const ExperimentConfig& config, uint64_t seed,
                 const StageOptions& options);

struct OptTrainSummary {
  // BI-tag accuracy of each trained tokenizer on the D-hat-prime it was
  // trained on.
  std::map<std::string, double> accuracy;
  std::map<std::string, int> epochs;
};
OptTrainSummary run_train_opt(const ExperimentConfig& config, uint64_t seed,
                              const StageOptions& options);

// Original, every configured optimized tokenizer and Oracle on one split.
EvalReport run_evaluate(const ExperimentConfig& config, uint64_t seed,
                        const std::string& split, const StageOptions& options);
// Mean over seeds of per-seed reports, with per-seed values kept under
// "<metric>.seed-<s>".
EvalReport aggregate_reports(const std::vector<uint64_t>& seeds,
                             const std::vector<EvalReport>& reports);

// Oracle and Original macro-F1 (metrics oracle_f1, original_f1) with one
// column "N=<n>" per swept N.
EvalReport run_sweep_n(const ExperimentConfig& config, uint64_t seed,
                       const std::string& split, const StageOptions& options);

// Per-seed runs plus out/<kind>-<split>.json holding the aggregate, with its
// own manifest.
EvalReport run_evaluate_all(const ExperimentConfig& config,
                            const std::vector<uint64_t>& seeds,
                            const std::string& split,
                            const StageOptions& options);
EvalReport run_sweep_all(const ExperimentConfig& config,
                         const std::vector<uint64_t>& seeds,
                         const std::string& split, const StageOptions& options);

}  // namespace retok

#endif  // RETOK_PIPELINE_H_
