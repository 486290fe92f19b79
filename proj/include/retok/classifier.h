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

#ifndef RETOK_CLASSIFIER_H_
#define RETOK_CLASSIFIER_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "retok/autodiff.h"
#include "retok/corpus.h"
#include "retok/nn.h"
#include "retok/tokenizers.h"

namespace retok {

enum class Pooling {
  kFinal,  // concat(final forward state, final backward state)
  kMean,   // mean of BiLSTM outputs over positions
};

struct ClassifierConfig {
  int embed_dim = 64;
  int hidden = 256;  // per direction
  int num_labels = 2;
  int vocab_size = 0;  // filled from the tokenizer when training
  int epochs = 20;
  double lr = 1e-3;
  int batch_size = 16;
  double clip_norm = 5.0;
  Pooling pooling = Pooling::kFinal;
  // Subword regularization during training; validation is deterministic.
  bool stochastic = true;
  SamplingOptions sampling;
};

nlohmann::json to_json(const ClassifierConfig& config);
// Strict: unknown keys and type errors throw ConfigError.
ClassifierConfig classifier_config_from_json(const nlohmann::json& j,
                                             const std::string& path = "");

// Token-embedding BiLSTM text classifier with a linear softmax head.
class ClassifierModel {
 public:
  ClassifierModel() = default;
  ClassifierModel(const ClassifierConfig& config, uint64_t seed);

  const ClassifierConfig& config() const { return config_; }
  const ad::ParamSet& params() const { return params_; }

  // Log-probabilities (1 x num_labels) for a token-id sequence.
  ad::Var log_probs(nn::Binder& bind, std::span<const int> ids) const;

 private:
  friend struct ClassifierAccess;

  ClassifierConfig config_;
  ad::ParamSet params_;
  size_t embedding_ = 0;
  nn::BiLstmParams encoder_;
  nn::MlpParams head_;
};

// Cross-entropy of the predicted distribution against |label|.
double classify_loss(const ClassifierModel& model, std::span<const int> ids,
                     int label);
double classify_loss(const ClassifierModel& model, const Vocabulary& vocab,
                     std::u32string_view sentence, const Segmentation& seg,
                     int label);
std::vector<double> predict(const ClassifierModel& model,
                            std::span<const int> ids);
int predict_label(const ClassifierModel& model, std::span<const int> ids);

struct ClassifierEpoch {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_f1 = 0.0;
};

struct ClassifierTrainResult {
  ClassifierModel model;
  std::vector<ClassifierEpoch> log;
  int best_epoch = 0;  // 0 when no epoch ran
  double best_valid_f1 = 0.0;
};

// Trains on |dataset.train| with stochastic tokenization and keeps the
// checkpoint with the best deterministic-tokenization valid macro-F1
// (earliest epoch on ties).
ClassifierTrainResult train_classifier(ClassifierConfig config,
                                       const Dataset& dataset,
                                       const Tokenizer& tokenizer,
                                       uint64_t seed);

// Macro-F1 of |model| on |examples| under deterministic tokenization.
double evaluate_classifier(const ClassifierModel& model,
                           const Tokenizer& tokenizer,
                           std::span<const LabeledExample> examples);

struct ClassifierMeta {
  std::string tokenizer_sha256;
  int best_epoch = 0;
  double valid_f1 = 0.0;
};

// Writes <base>.json (config and metadata) plus <base>.weights.json and
// <base>.weights.bin.
void save_classifier(const ClassifierModel& model, const ClassifierMeta& meta,
                     const std::filesystem::path& base);
ClassifierModel load_classifier(const std::filesystem::path& base,
                                ClassifierMeta* meta = nullptr);

}  // namespace retok

#endif  // RETOK_CLASSIFIER_H_
