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

#include "retok/classifier.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "retok/json_util.h"
#include "retok/metrics.h"
#include "retok/rng.h"
#include "retok/utf8.h"

namespace retok {

struct ClassifierAccess {
  static ad::ParamSet& params(ClassifierModel& m) { return m.params_; }
};

namespace {

std::string_view pooling_name(Pooling p) {
  return p == Pooling::kFinal ? "final" : "mean";
}

Pooling parse_pooling(const std::string& s, const std::string& field) {
  if (s == "final") return Pooling::kFinal;
  if (s == "mean") return Pooling::kMean;
  throw ConfigError(field + ": expected \"final\" or \"mean\", got \"" + s +
                    "\"");
}

void check_positive(int v, const std::string& field) {
  if (v <= 0) throw ConfigError(field + ": must be positive");
}

}  // namespace

nlohmann::json to_json(const ClassifierConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"hidden", c.hidden},
          {"num_labels", c.num_labels},
          {"vocab_size", c.vocab_size},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"clip_norm", c.clip_norm},
          {"pooling", pooling_name(c.pooling)},
          {"stochastic", c.stochastic},
          {"alpha", c.sampling.alpha},
          {"dropout_p", c.sampling.dropout_p}};
}

ClassifierConfig classifier_config_from_json(const nlohmann::json& j,
                                             const std::string& path) {
  ClassifierConfig c;
  JsonReader r(j, path);
  r.get("embed_dim", c.embed_dim);
  r.get("hidden", c.hidden);
  r.get("num_labels", c.num_labels);
  r.get("vocab_size", c.vocab_size);
  r.get("epochs", c.epochs);
  r.get("lr", c.lr);
  r.get("batch_size", c.batch_size);
  r.get("clip_norm", c.clip_norm);
  std::string pooling(pooling_name(c.pooling));
  r.get("pooling", pooling);
  c.pooling = parse_pooling(pooling, r.field("pooling"));
  r.get("stochastic", c.stochastic);
  r.get("alpha", c.sampling.alpha);
  r.get("dropout_p", c.sampling.dropout_p);
  r.finish();
  check_positive(c.embed_dim, r.field("embed_dim"));
  check_positive(c.hidden, r.field("hidden"));
  check_positive(c.batch_size, r.field("batch_size"));
  if (c.num_labels < 2) throw ConfigError(r.field("num_labels") + ": must be >= 2");
  if (c.epochs < 0) throw ConfigError(r.field("epochs") + ": must be >= 0");
  if (!(c.lr > 0)) throw ConfigError(r.field("lr") + ": must be positive");
  if (c.sampling.alpha < 0) throw ConfigError(r.field("alpha") + ": must be >= 0");
  if (c.sampling.dropout_p < 0 || c.sampling.dropout_p > 1) {
    throw ConfigError(r.field("dropout_p") + ": must be in [0, 1]");
  }
  return c;
}

ClassifierModel::ClassifierModel(const ClassifierConfig& config, uint64_t seed)
    : config_(config) {
  if (config.vocab_size < 1 || config.embed_dim < 1 || config.hidden < 1 ||
      config.num_labels < 1) {
    throw std::invalid_argument("ClassifierModel: non-positive dimension");
  }
  Rng rng = Rng::stream(seed, "classifier-init");
  embedding_ = params_.add(
      "embedding",
      ad::xavier_uniform(config.vocab_size, config.embed_dim, rng));
  encoder_ = nn::add_bilstm(params_, "encoder", config.embed_dim,
                            config.hidden, rng);
  head_ = nn::add_mlp(params_, "output", {2 * config.hidden, config.num_labels},
                      rng);
}

ad::Var ClassifierModel::log_probs(nn::Binder& bind,
                                   std::span<const int> ids) const {
  if (ids.empty()) throw std::invalid_argument("classifier: empty input");
  const int t = static_cast<int>(ids.size());
  const int h = config_.hidden;
  ad::Var x = ad::rows(bind(embedding_), {ids.begin(), ids.end()});
  ad::Var states = nn::bilstm(bind, encoder_, x);
  ad::Var pooled;
  if (config_.pooling == Pooling::kFinal) {
    pooled = ad::concat_cols(
        {ad::slice_cols(ad::slice_rows(states, t - 1, 1), 0, h),
         ad::slice_cols(ad::slice_rows(states, 0, 1), h, h)});
  } else {
    ad::Var avg = bind.tape().constant(ad::Matrix::Constant(1, t, 1.0 / t));
    pooled = ad::matmul(avg, states);
  }
  return ad::log_softmax(nn::mlp(bind, head_, pooled));
}

double classify_loss(const ClassifierModel& model, std::span<const int> ids,
                     int label) {
  if (label < 0 || label >= model.config().num_labels) {
    throw std::out_of_range("classify_loss: label out of range");
  }
  ad::Tape tape(false);
  nn::Binder bind(tape, model.params());
  return -model.log_probs(bind, ids).value()(0, label);
}

double classify_loss(const ClassifierModel& model, const Vocabulary& vocab,
                     std::u32string_view sentence, const Segmentation& seg,
                     int label) {
  const auto ids = token_ids(vocab, sentence, seg);
  return classify_loss(model, ids, label);
}

std::vector<double> predict(const ClassifierModel& model,
                            std::span<const int> ids) {
  ad::Tape tape(false);
  nn::Binder bind(tape, model.params());
  const ad::Matrix& lp = model.log_probs(bind, ids).value();
  std::vector<double> p(lp.cols());
  for (Eigen::Index k = 0; k < lp.cols(); ++k) p[k] = std::exp(lp(0, k));
  return p;
}

int predict_label(const ClassifierModel& model, std::span<const int> ids) {
  const auto p = predict(model, ids);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

double evaluate_classifier(const ClassifierModel& model,
                           const Tokenizer& tokenizer,
                           std::span<const LabeledExample> examples) {
  std::vector<int> pred, gold;
  pred.reserve(examples.size());
  for (const auto& ex : examples) {
    const std::u32string s = chars_of(ex.text);
    const auto ids = token_ids(tokenizer.vocab(), s, tokenizer.encode(s));
    pred.push_back(predict_label(model, ids));
    gold.push_back(ex.label);
  }
  return macro_f1(pred, gold, model.config().num_labels);
}

ClassifierTrainResult train_classifier(ClassifierConfig config,
                                       const Dataset& dataset,
                                       const Tokenizer& tokenizer,
                                       uint64_t seed) {
  config.vocab_size = tokenizer.vocab().size();
  config.num_labels = std::max(config.num_labels, dataset.num_labels);
  ClassifierTrainResult result{ClassifierModel(config, seed), {}, 0, 0.0};
  if (config.epochs == 0) return result;
  if (dataset.train.empty() || dataset.valid.empty()) {
    throw std::invalid_argument("train_classifier: empty train or valid split");
  }

  const Vocabulary& vocab = tokenizer.vocab();
  std::vector<std::u32string> train_text;
  std::vector<std::vector<int>> train_ids;  // deterministic, for p = 0 runs
  for (const auto& ex : dataset.train) {
    train_text.push_back(chars_of(ex.text));
    if (!config.stochastic) {
      train_ids.push_back(token_ids(vocab, train_text.back(),
                                    tokenizer.encode(train_text.back())));
    }
  }

  ClassifierModel model = result.model;
  ad::ParamSet& params = ClassifierAccess::params(model);
  ad::AdamConfig adam;
  adam.lr = config.lr;
  const size_t n = dataset.train.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double best = -1.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng order_rng = Rng::stream(seed, "classifier-order", epoch);
    order_rng.shuffle(order.begin(), order.end());
    double total_loss = 0.0;
    for (size_t begin = 0; begin < n; begin += config.batch_size) {
      const size_t end = std::min(n, begin + config.batch_size);
      const double weight = 1.0 / static_cast<double>(end - begin);
      for (size_t k = begin; k < end; ++k) {
        const size_t i = order[k];
        std::vector<int> ids;
        if (config.stochastic) {
          Rng tok_rng = Rng::stream(seed, "classifier-tokenize",
                                    static_cast<uint64_t>(epoch) * n + i);
          ids = token_ids(vocab, train_text[i],
                          tokenizer.sample(train_text[i], config.sampling,
                                           tok_rng));
        } else {
          ids = train_ids[i];
        }
        ad::Tape tape;
        nn::Binder bind(tape, params);
        ad::Var lp = model.log_probs(bind, ids);
        ad::Var loss = ad::neg(ad::pick(lp, 0, dataset.train[i].label));
        total_loss += loss.scalar();
        tape.backward(ad::scale(loss, weight));
      }
      params.clip_grad_norm(config.clip_norm);
      ad::adam_step(params, adam);
    }
    const double f1 = evaluate_classifier(model, tokenizer, dataset.valid);
    result.log.push_back({epoch, total_loss / static_cast<double>(n), f1});
    if (f1 > best) {
      best = f1;
      result.model = model;
      result.best_epoch = epoch;
      result.best_valid_f1 = f1;
    }
  }
  return result;
}

void save_classifier(const ClassifierModel& model, const ClassifierMeta& meta,
                     const std::filesystem::path& base) {
  const std::string b = base.string();
  ad::save_weights(model.params(), b + ".weights.json", b + ".weights.bin");
  nlohmann::json j = {{"config", to_json(model.config())},
                      {"format_version", 1},
                      {"tokenizer_sha256", meta.tokenizer_sha256},
                      {"best_epoch", meta.best_epoch},
                      {"valid_f1", meta.valid_f1}};
  std::ofstream out(b + ".json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + b + ".json");
  out << j.dump(1) << "\n";
  if (!out) throw std::runtime_error("write failed: " + b + ".json");
}

ClassifierModel load_classifier(const std::filesystem::path& base,
                                ClassifierMeta* meta) {
  const std::string b = base.string();
  std::ifstream in(b + ".json");
  if (!in) throw std::runtime_error("cannot read " + b + ".json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(b + ".json: " + e.what());
  }
  ClassifierConfig config;
  ClassifierMeta m;
  try {
    JsonReader r(j, "");
    int version = 0;
    r.require("format_version", version);
    if (version != 1) throw ConfigError("unsupported classifier format version");
    config = classifier_config_from_json(j.at("config"), "config");
    r.child("config");
    r.get("tokenizer_sha256", m.tokenizer_sha256);
    r.get("best_epoch", m.best_epoch);
    r.get("valid_f1", m.valid_f1);
    r.finish();
  } catch (const ConfigError& e) {
    throw std::runtime_error(b + ".json: " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(b + ".json: " + e.what());
  }
  ClassifierModel model(config, 0);
  ad::load_weights(ClassifierAccess::params(model), b + ".weights.json",
                   b + ".weights.bin");
  if (meta) *meta = m;
  return model;
}

}  // namespace retok
