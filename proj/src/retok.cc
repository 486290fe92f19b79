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

#include "retok/retok.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "retok/json_util.h"
#include "retok/metrics.h"
#include "retok/parallel.h"
#include "retok/utf8.h"

namespace retok {

// ---------------------------------------------------------------------------
// Candidates

std::string_view mode_name(CandidateMode mode) {
  return mode == CandidateMode::kNbest ? "nbest" : "sample";
}

CandidateMode parse_mode(std::string_view name) {
  if (name == "nbest") return CandidateMode::kNbest;
  if (name == "sample") return CandidateMode::kSample;
  throw std::invalid_argument("unknown candidate mode: " + std::string(name));
}

CandidateSet generate_candidates(std::u32string_view sentence,
                                 const Tokenizer& tokenizer, int n,
                                 CandidateMode mode,
                                 const SamplingOptions& sampling, Rng& rng) {
  if (n < 1) throw std::invalid_argument("generate_candidates: n < 1");
  CandidateSet set;
  set.n_requested = n;
  if (tokenizer.kind() == TokenizerKind::kUnigram &&
      mode == CandidateMode::kNbest && !sentence.empty()) {
    const auto& model = std::get<UnigramModel>(tokenizer.model());
    const auto best = unigram_nbest(model, sentence, n);
    for (size_t r = 0; r < best.size(); ++r) {
      set.candidates.push_back({best[r].segmentation, 0.0, static_cast<int>(r)});
    }
    return set;
  }
  std::set<Segmentation> seen;
  Segmentation det = tokenizer.encode(sentence);
  seen.insert(det);
  set.candidates.push_back({std::move(det), 0.0, 0});
  const int max_attempts = 5 * n;
  for (int attempt = 1;
       static_cast<int>(set.candidates.size()) < n && attempt <= max_attempts;
       ++attempt) {
    Segmentation seg = tokenizer.sample(sentence, sampling, rng);
    if (seen.insert(seg).second) {
      set.candidates.push_back({std::move(seg), 0.0, attempt});
    }
  }
  return set;
}

int select_best(const CandidateSet& set) {
  if (set.candidates.empty()) throw std::invalid_argument("empty candidate set");
  int best = 0;
  for (int i = 1; i < static_cast<int>(set.candidates.size()); ++i) {
    if (set.candidates[i].loss < set.candidates[best].loss) best = i;
  }
  return best;
}

namespace {

struct Scored {
  CandidateSet set;
  int best = 0;
};

Scored score_sentence(const LabeledExample& ex, std::u32string_view sentence,
                      const ClassifierModel& model, const Tokenizer& tokenizer,
                      const CollectOptions& options) {
  Rng rng = Rng::stream(options.seed, "candidates",
                        static_cast<uint64_t>(ex.id));
  Scored s;
  s.set = generate_candidates(sentence, tokenizer, options.n, options.mode,
                              options.sampling, rng);
  s.set.sentence_id = ex.id;
  for (auto& c : s.set.candidates) {
    c.loss = classify_loss(model, tokenizer.vocab(), sentence, c.segmentation,
                           ex.label);
    if (!std::isfinite(c.loss)) {
      throw std::runtime_error("non-finite loss for sentence " +
                               std::to_string(ex.id));
    }
  }
  s.best = select_best(s.set);
  return s;
}

}  // namespace

CollectResult collect_best(std::span<const LabeledExample> examples,
                           const ClassifierModel& model,
                           const Tokenizer& tokenizer,
                           const CollectOptions& options) {
  CollectResult out;
  out.records.resize(examples.size());
  out.base_losses.resize(examples.size());
  parallel_for(examples.size(), options.threads, [&](size_t i) {
    const LabeledExample& ex = examples[i];
    const std::u32string s = chars_of(ex.text);
    Scored sc = score_sentence(ex, s, model, tokenizer, options);
    const Candidate& best = sc.set.candidates[sc.best];
    RetokRecord& r = out.records[i];
    r.id = ex.id;
    r.text = ex.text;
    r.segmentation = best.segmentation;
    r.loss = best.loss;
    r.label = ex.label;
    r.n_candidates = static_cast<int>(sc.set.candidates.size());
    out.base_losses[i] = sc.set.candidates[0].loss;
  });
  return out;
}

OracleResult oracle_select(std::span<const LabeledExample> examples,
                           const ClassifierModel& model,
                           const Tokenizer& tokenizer,
                           const CollectOptions& options) {
  if (examples.empty()) throw std::invalid_argument("oracle_select: empty split");
  OracleResult out;
  out.chosen.resize(examples.size());
  out.predictions.resize(examples.size());
  out.base_predictions.resize(examples.size());
  parallel_for(examples.size(), options.threads, [&](size_t i) {
    const LabeledExample& ex = examples[i];
    const std::u32string s = chars_of(ex.text);
    Scored sc = score_sentence(ex, s, model, tokenizer, options);
    const Vocabulary& vocab = tokenizer.vocab();
    out.chosen[i] = sc.set.candidates[sc.best].segmentation;
    out.predictions[i] =
        predict_label(model, token_ids(vocab, s, out.chosen[i]));
    out.base_predictions[i] = predict_label(
        model, token_ids(vocab, s, sc.set.candidates[0].segmentation));
  });
  std::vector<int> gold;
  for (const auto& ex : examples) gold.push_back(ex.label);
  const int labels = model.config().num_labels;
  out.f1 = macro_f1(out.predictions, gold, labels);
  out.base_f1 = macro_f1(out.base_predictions, gold, labels);
  return out;
}

void save_retok_dataset(std::span<const RetokRecord> records,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) {
    const std::u32string s = chars_of(r.text);
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["text"] = r.text;
    j["tokens"] = r.segmentation.tokens(s);
    nlohmann::ordered_json spans = nlohmann::ordered_json::array();
    for (const Span& sp : r.segmentation.spans) spans.push_back({sp.start, sp.end});
    j["spans"] = spans;
    j["loss"] = r.loss;
    j["label"] = r.label;
    j["n_candidates"] = r.n_candidates;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<RetokRecord> load_retok_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<RetokRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      RetokRecord r;
      r.id = j.at("id").get<int64_t>();
      r.text = j.at("text").get<std::string>();
      for (const auto& sp : j.at("spans")) {
        r.segmentation.spans.push_back(
            {sp.at(0).get<int>(), sp.at(1).get<int>()});
      }
      r.loss = j.at("loss").get<double>();
      r.label = j.at("label").get<int>();
      r.n_candidates = j.at("n_candidates").get<int>();
      const std::u32string s = chars_of(r.text);
      if (!r.segmentation.covers(static_cast<int>(s.size()))) {
        throw std::runtime_error("spans do not cover the text");
      }
      if (r.segmentation.tokens(s) !=
          j.at("tokens").get<std::vector<std::string>>()) {
        throw std::runtime_error("tokens disagree with spans");
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Configuration

nlohmann::json to_json(const NeuralTokenizerConfig& c) {
  return {{"char_dim", c.char_dim},
          {"hidden", c.hidden},
          {"mlp_hidden", c.mlp_hidden},
          {"proj_dim", c.proj_dim},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"clip_norm", c.clip_norm},
          {"early_stop", c.early_stop},
          {"patience", c.patience},
          {"negative_sampling", c.negative_sampling},
          {"negatives_per_sentence", c.negatives_per_sentence}};
}

NeuralTokenizerConfig neural_config_from_json(const nlohmann::json& j,
                                              const std::string& path) {
  NeuralTokenizerConfig c;
  JsonReader r(j, path);
  r.get("char_dim", c.char_dim);
  r.get("hidden", c.hidden);
  r.get("mlp_hidden", c.mlp_hidden);
  r.get("proj_dim", c.proj_dim);
  r.get("epochs", c.epochs);
  r.get("lr", c.lr);
  r.get("batch_size", c.batch_size);
  r.get("clip_norm", c.clip_norm);
  r.get("early_stop", c.early_stop);
  r.get("patience", c.patience);
  r.get("negative_sampling", c.negative_sampling);
  r.get("negatives_per_sentence", c.negatives_per_sentence);
  r.finish();
  auto positive = [&](int v, const char* key) {
    if (v <= 0) throw ConfigError(r.field(key) + ": must be positive");
  };
  positive(c.char_dim, "char_dim");
  positive(c.hidden, "hidden");
  positive(c.proj_dim, "proj_dim");
  positive(c.batch_size, "batch_size");
  positive(c.patience, "patience");
  if (c.mlp_hidden < 0) throw ConfigError(r.field("mlp_hidden") + ": must be >= 0");
  if (c.epochs < 0) throw ConfigError(r.field("epochs") + ": must be >= 0");
  if (c.epochs > 200) throw ConfigError(r.field("epochs") + ": at most 200");
  if (!(c.lr > 0)) throw ConfigError(r.field("lr") + ": must be positive");
  return c;
}

// ---------------------------------------------------------------------------
// Span tokenizer

SpanTokenizer::SpanTokenizer(const NeuralTokenizerConfig& config,
                             Vocabulary vocab, CharTable chars, uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), chars_(std::move(chars)) {
  Rng rng = Rng::stream(seed, "span-tokenizer-init");
  embedding_ = params_.add(
      "char_embedding",
      ad::xavier_uniform(chars_.size(), config.char_dim, rng));
  encoder_ = nn::add_bilstm(params_, "encoder", config.char_dim,
                            config.hidden, rng);
  std::vector<int> dims = {2 * config.hidden};
  if (config.mlp_hidden > 0) dims.push_back(config.mlp_hidden);
  dims.push_back(config.proj_dim);
  begin_ = nn::add_mlp(params_, "mlp_begin", dims, rng);
  end_ = nn::add_mlp(params_, "mlp_end", dims, rng);
}

ad::Var SpanTokenizer::span_logits(nn::Binder& bind,
                                   std::u32string_view sentence) const {
  if (sentence.empty()) throw std::invalid_argument("span_logits: empty input");
  ad::Var x = ad::rows(bind(embedding_), chars_.encode(sentence));
  ad::Var h = nn::bilstm(bind, encoder_, x);
  ad::Var b = nn::mlp(bind, begin_, h);
  ad::Var e = nn::mlp(bind, end_, h);
  return ad::matmul(b, ad::transpose(e));
}

namespace {

double log_sigmoid_value(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// Cells (start, end - 1) of the gold spans that are in the vocabulary.
std::vector<std::pair<int, int>> gold_cells(const Vocabulary& vocab,
                                            std::u32string_view sentence,
                                            const Segmentation& gold) {
  if (!gold.covers(static_cast<int>(sentence.size()))) {
    throw std::invalid_argument("gold segmentation does not cover sentence");
  }
  std::vector<std::pair<int, int>> cells;
  for (const Span& sp : gold.spans) {
    if (vocab.span_id(sentence, sp.start, sp.end) >= 0) {
      cells.emplace_back(sp.start, sp.end - 1);
    } else if (sp.end - sp.start > 1) {
      throw std::invalid_argument(
          "gold span \"" + to_utf8(sentence.substr(sp.start, sp.end - sp.start)) +
          "\" is outside the vocabulary");
    }
  }
  return cells;
}

}  // namespace

std::vector<SpanProb> span_scores(const SpanTokenizer& tok,
                                  std::u32string_view sentence) {
  std::vector<SpanProb> out;
  if (sentence.empty()) return out;
  ad::Tape tape(false);
  nn::Binder bind(tape, tok.params());
  const ad::Matrix& s = tok.span_logits(bind, sentence).value();
  for (int i = 0; i < static_cast<int>(sentence.size()); ++i) {
    tok.vocab().for_each_match(sentence, i, [&](int end, int) {
      out.push_back({i, end, 1.0 / (1.0 + std::exp(-s(i, end - 1)))});
    });
  }
  return out;
}

ad::Var span_tokenizer_loss(nn::Binder& bind, const SpanTokenizer& tok,
                            std::u32string_view sentence,
                            const Segmentation& gold) {
  const auto cells = gold_cells(tok.vocab(), sentence, gold);
  if (cells.empty()) return bind.tape().scalar(0.0);
  ad::Var s = tok.span_logits(bind, sentence);
  return ad::neg(ad::sum(ad::log_sigmoid(ad::gather_cells(s, cells))));
}

double span_tokenizer_loss(const SpanTokenizer& tok,
                           std::u32string_view sentence,
                           const Segmentation& gold) {
  ad::Tape tape(false);
  nn::Binder bind(tape, tok.params());
  return span_tokenizer_loss(bind, tok, sentence, gold).scalar();
}

Segmentation span_tokenize(const SpanTokenizer& tok,
                           std::u32string_view sentence) {
  if (sentence.empty()) return {};
  ad::Tape tape(false);
  nn::Binder bind(tape, tok.params());
  const ad::Matrix& s = tok.span_logits(bind, sentence).value();
  const double fallback = std::log(0.5);
  Lattice lattice =
      build_lattice(sentence, tok.vocab(), [&](int start, int end, int id) {
        return id == Vocabulary::kUnkId ? fallback
                                        : log_sigmoid_value(s(start, end - 1));
      });
  return viterbi_best(lattice);
}

// ---------------------------------------------------------------------------
// Shared training loop

namespace {

using LossFn = std::function<ad::Var(nn::Binder&, size_t record, Rng& rng)>;
using DecodeFn = std::function<Segmentation(size_t record)>;

std::vector<TokenizerEpoch> train_loop(size_t n, ad::ParamSet& params,
                                       const NeuralTokenizerConfig& config,
                                       uint64_t seed, const std::string& name,
                                       const LossFn& loss_fn,
                                       const DecodeFn& decode,
                                       std::span<const RetokRecord> records) {
  std::vector<TokenizerEpoch> log;
  if (config.epochs == 0) return log;
  std::vector<Segmentation> gold;
  for (const auto& r : records) gold.push_back(r.segmentation);
  ad::AdamConfig adam;
  adam.lr = config.lr;
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double best_acc = -1.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng order_rng = Rng::stream(seed, name + "-order", epoch);
    order_rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (size_t begin = 0; begin < n; begin += config.batch_size) {
      const size_t end = std::min(n, begin + config.batch_size);
      const double weight = 1.0 / static_cast<double>(end - begin);
      for (size_t k = begin; k < end; ++k) {
        Rng rng = Rng::stream(seed, name + "-negatives",
                              static_cast<uint64_t>(epoch) * n + order[k]);
        ad::Tape tape;
        nn::Binder bind(tape, params);
        ad::Var loss = loss_fn(bind, order[k], rng);
        total += loss.scalar();
        tape.backward(ad::scale(loss, weight));
      }
      params.clip_grad_norm(config.clip_norm);
      ad::adam_step(params, adam);
    }
    std::vector<Segmentation> hyp(n);
    for (size_t i = 0; i < n; ++i) hyp[i] = decode(i);
    const double acc = bi_tag_accuracy(hyp, gold);
    log.push_back({epoch, total / static_cast<double>(n), acc});
    if (acc > best_acc) {
      best_acc = acc;
      since_best = 0;
    } else if (++since_best >= config.patience && config.early_stop) {
      break;
    }
  }
  return log;
}

}  // namespace

SpanTrainResult train_span_tokenizer(std::span<const RetokRecord> records,
                                     const Vocabulary& vocab,
                                     const CharTable& chars,
                                     const NeuralTokenizerConfig& config,
                                     uint64_t seed) {
  if (records.empty()) throw std::invalid_argument("train_span_tokenizer: no records");
  SpanTrainResult result{SpanTokenizer(config, vocab, chars, seed), {}};
  SpanTokenizer& tok = result.model;
  std::vector<std::u32string> text;
  std::vector<std::vector<std::pair<int, int>>> cells;
  for (const auto& r : records) {
    text.push_back(chars_of(r.text));
    cells.push_back(gold_cells(vocab, text.back(), r.segmentation));
  }
  auto loss_fn = [&](nn::Binder& bind, size_t i, Rng& rng) -> ad::Var {
    if (cells[i].empty()) return bind.tape().scalar(0.0);
    ad::Var s = tok.span_logits(bind, text[i]);
    ad::Var loss = ad::neg(ad::sum(ad::log_sigmoid(ad::gather_cells(s, cells[i]))));
    if (config.negative_sampling) {
      std::set<std::pair<int, int>> positive(cells[i].begin(), cells[i].end());
      std::vector<std::pair<int, int>> absent;
      for (int a = 0; a < static_cast<int>(text[i].size()); ++a) {
        vocab.for_each_match(text[i], a, [&](int end, int) {
          if (!positive.count({a, end - 1})) absent.emplace_back(a, end - 1);
        });
      }
      rng.shuffle(absent.begin(), absent.end());
      if (static_cast<int>(absent.size()) > config.negatives_per_sentence) {
        absent.resize(config.negatives_per_sentence);
      }
      if (!absent.empty()) {
        ad::Var neg_cells = ad::neg(ad::gather_cells(s, absent));
        loss = ad::sub(loss, ad::sum(ad::log_sigmoid(neg_cells)));
      }
    }
    return loss;
  };
  auto decode = [&](size_t i) { return span_tokenize(tok, text[i]); };
  result.log = train_loop(records.size(), tok.mutable_params(), config, seed,
                          "span-tokenizer", loss_fn, decode, records);
  return result;
}

// ---------------------------------------------------------------------------
// BI tagger

BiTagTokenizer::BiTagTokenizer(const NeuralTokenizerConfig& config,
                               CharTable chars, uint64_t seed)
    : config_(config), chars_(std::move(chars)) {
  Rng rng = Rng::stream(seed, "bitag-init");
  embedding_ = params_.add(
      "char_embedding",
      ad::xavier_uniform(chars_.size(), config.char_dim, rng));
  encoder_ = nn::add_bilstm(params_, "encoder", config.char_dim,
                            config.hidden, rng);
  emit_ = nn::add_mlp(params_, "emission", {2 * config.hidden, 2}, rng);
  transitions_ = params_.add("crf.transitions", ad::Matrix::Zero(2, 2));
}

ad::Var BiTagTokenizer::emissions(nn::Binder& bind,
                                  std::u32string_view sentence) const {
  if (sentence.empty()) throw std::invalid_argument("emissions: empty input");
  ad::Var x = ad::rows(bind(embedding_), chars_.encode(sentence));
  return nn::mlp(bind, emit_, nn::bilstm(bind, encoder_, x));
}

namespace {

// Tag 0 = B, tag 1 = I.
std::vector<int> tag_ids(const Segmentation& seg) {
  std::vector<int> tags;
  for (bool b : to_bi_tags(seg)) tags.push_back(b ? 0 : 1);
  return tags;
}

}  // namespace

double bitag_loss(const BiTagTokenizer& tok, std::u32string_view sentence,
                  const Segmentation& gold) {
  ad::Tape tape(false);
  nn::Binder bind(tape, tok.params());
  return ad::crf_nll(tok.emissions(bind, sentence), tok.transitions(bind),
                     tag_ids(gold))
      .scalar();
}

Segmentation bitag_tokenize(const BiTagTokenizer& tok,
                            std::u32string_view sentence) {
  if (sentence.empty()) return {};
  ad::Tape tape(false);
  nn::Binder bind(tape, tok.params());
  const auto tags = ad::crf_decode(tok.emissions(bind, sentence).value(),
                                   tok.transitions(bind).value());
  std::vector<bool> b;
  for (int t : tags) b.push_back(t == 0);
  return from_bi_tags(b);
}

BiTagTrainResult train_bitag(std::span<const RetokRecord> records,
                             const CharTable& chars,
                             const NeuralTokenizerConfig& config,
                             uint64_t seed) {
  if (records.empty()) throw std::invalid_argument("train_bitag: no records");
  BiTagTrainResult result{BiTagTokenizer(config, chars, seed), {}};
  BiTagTokenizer& tok = result.model;
  std::vector<std::u32string> text;
  std::vector<std::vector<int>> tags;
  for (const auto& r : records) {
    text.push_back(chars_of(r.text));
    if (!r.segmentation.covers(static_cast<int>(text.back().size()))) {
      throw std::invalid_argument("train_bitag: record " + std::to_string(r.id) +
                                  " does not cover its text");
    }
    tags.push_back(tag_ids(r.segmentation));
  }
  auto loss_fn = [&](nn::Binder& bind, size_t i, Rng&) -> ad::Var {
    if (text[i].empty()) return bind.tape().scalar(0.0);
    return ad::crf_nll(tok.emissions(bind, text[i]), tok.transitions(bind),
                       tags[i]);
  };
  auto decode = [&](size_t i) { return bitag_tokenize(tok, text[i]); };
  result.log = train_loop(records.size(), tok.mutable_params(), config, seed,
                          "bitag", loss_fn, decode, records);
  return result;
}

// ---------------------------------------------------------------------------
// Unigram over harvested tokens

UnigramModel build_unigram_opt(std::span<const RetokRecord> records,
                               const Vocabulary& vocab,
                               const CharTable& chars) {
  if (records.empty()) throw std::invalid_argument("build_unigram_opt: no records");
  std::map<std::string, double> counts;
  for (const auto& r : records) {
    const std::u32string s = chars_of(r.text);
    for (const Span& sp : r.segmentation.spans) {
      if (sp.end - sp.start > 1 && vocab.span_id(s, sp.start, sp.end) < 0) {
        continue;
      }
      counts[vocab.span_token(s, sp.start, sp.end)] += 1.0;
    }
  }
  const std::string& prefix = vocab.continuation_prefix();
  for (char32_t c : chars.chars()) {
    counts[to_utf8(c)] += kBackoffCount;
    if (!prefix.empty() && !is_space(c)) counts[prefix + to_utf8(c)] += kBackoffCount;
  }
  double total = 0.0;
  for (const auto& [tok, c] : counts) total += c;
  std::vector<std::string> pieces;
  std::vector<double> log_probs;
  for (const auto& [tok, c] : counts) {
    pieces.push_back(tok);
    log_probs.push_back(std::log(c / total));
  }
  return UnigramModel(pieces, std::move(log_probs), prefix);
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr int kNeuralFormatVersion = 1;

nlohmann::json chars_json(const CharTable& chars) {
  nlohmann::json arr = nlohmann::json::array();
  for (char32_t c : chars.chars()) arr.push_back(to_utf8(c));
  return arr;
}

CharTable chars_from_json(const nlohmann::json& arr) {
  std::vector<char32_t> out;
  for (const auto& s : arr) {
    const std::u32string c = chars_of(s.get<std::string>());
    if (c.size() != 1) throw std::runtime_error("bad character entry");
    out.push_back(c[0]);
  }
  return CharTable(std::move(out));
}

void write_sidecar(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(1) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

nlohmann::json read_sidecar(const std::string& path, const char* kind) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.at("kind").get<std::string>() != kind) {
      throw std::runtime_error(path + ": not a " + std::string(kind) +
                               " tokenizer");
    }
    if (j.at("format_version").get<int>() != kNeuralFormatVersion) {
      throw std::runtime_error(path + ": unsupported format version");
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return j;
}

}  // namespace

void save_span_tokenizer(const SpanTokenizer& tok,
                         const std::filesystem::path& base) {
  const std::string b = base.string();
  std::vector<std::string> pieces(tok.vocab().tokens().begin() + 1,
                                  tok.vocab().tokens().end());
  nlohmann::json j = {{"kind", "span"},
                      {"format_version", kNeuralFormatVersion},
                      {"config", to_json(tok.config())},
                      {"vocab", pieces},
                      {"continuation_prefix", tok.vocab().continuation_prefix()},
                      {"chars", chars_json(tok.chars())}};
  ad::save_weights(tok.params(), b + ".weights.json", b + ".weights.bin");
  write_sidecar(j, b + ".json");
}

SpanTokenizer load_span_tokenizer(const std::filesystem::path& base) {
  const std::string b = base.string();
  const auto j = read_sidecar(b + ".json", "span");
  SpanTokenizer tok;
  try {
    tok = SpanTokenizer(
        neural_config_from_json(j.at("config"), "config"),
        Vocabulary(j.at("vocab").get<std::vector<std::string>>(),
                   j.at("continuation_prefix").get<std::string>()),
        chars_from_json(j.at("chars")), 0);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(b + ".json: " + e.what());
  } catch (const ConfigError& e) {
    throw std::runtime_error(b + ".json: " + e.what());
  }
  ad::load_weights(tok.mutable_params(), b + ".weights.json",
                   b + ".weights.bin");
  return tok;
}

void save_bitag_tokenizer(const BiTagTokenizer& tok,
                          const std::filesystem::path& base) {
  const std::string b = base.string();
  nlohmann::json j = {{"kind", "bitag"},
                      {"format_version", kNeuralFormatVersion},
                      {"config", to_json(tok.config())},
                      {"chars", chars_json(tok.chars())}};
  ad::save_weights(tok.params(), b + ".weights.json", b + ".weights.bin");
  write_sidecar(j, b + ".json");
}

BiTagTokenizer load_bitag_tokenizer(const std::filesystem::path& base) {
  const std::string b = base.string();
  const auto j = read_sidecar(b + ".json", "bitag");
  BiTagTokenizer tok;
  try {
    tok = BiTagTokenizer(neural_config_from_json(j.at("config"), "config"),
                         chars_from_json(j.at("chars")), 0);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(b + ".json: " + e.what());
  } catch (const ConfigError& e) {
    throw std::runtime_error(b + ".json: " + e.what());
  }
  ad::load_weights(tok.mutable_params(), b + ".weights.json",
                   b + ".weights.bin");
  return tok;
}

}  // namespace retok
