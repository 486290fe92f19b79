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

#include "retok/tokenizers.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace retok {
namespace {

constexpr double kUnkPenalty = 10.0;
constexpr double kMinExpectedCount = 1e-8;

struct U32Hash {
  size_t operator()(const std::u32string& s) const {
    return std::hash<std::u32string>()(s);
  }
};

// Distinct sentences with multiplicities, in first-occurrence order.
std::vector<std::pair<std::u32string, int64_t>> count_sentences(
    std::span<const std::string> corpus) {
  std::unordered_map<std::u32string, size_t, U32Hash> index;
  std::vector<std::pair<std::u32string, int64_t>> out;
  for (const auto& text : corpus) {
    std::u32string chars = chars_of(text);
    if (chars.empty()) continue;
    const auto [it, inserted] = index.emplace(chars, out.size());
    if (inserted) {
      out.emplace_back(std::move(chars), 1);
    } else {
      ++out[it->second].second;
    }
  }
  return out;
}

// Characters ordered by first occurrence.
std::vector<char32_t> alphabet_of(
    const std::vector<std::pair<std::u32string, int64_t>>& sentences) {
  std::vector<char32_t> alphabet;
  std::set<char32_t> seen;
  for (const auto& [s, freq] : sentences) {
    for (char32_t c : s) {
      if (seen.insert(c).second) alphabet.push_back(c);
    }
  }
  return alphabet;
}

}  // namespace

// ---------------------------------------------------------------------------
// Unigram

UnigramModel::UnigramModel(const std::vector<std::string>& pieces,
                           std::vector<double> log_probs,
                           std::string continuation_prefix)
    : vocab_(pieces, std::move(continuation_prefix)) {
  if (log_probs.size() != pieces.size()) {
    throw std::invalid_argument("UnigramModel: pieces/log_probs size mismatch");
  }
  double min_lp = 0.0;
  for (double lp : log_probs) {
    if (!std::isfinite(lp)) {
      throw std::invalid_argument("UnigramModel: non-finite log probability");
    }
    min_lp = std::min(min_lp, lp);
  }
  log_probs_.reserve(log_probs.size() + 1);
  log_probs_.push_back(min_lp - kUnkPenalty);
  log_probs_.insert(log_probs_.end(), log_probs.begin(), log_probs.end());
}

Lattice UnigramModel::lattice(std::u32string_view sentence) const {
  return build_lattice(sentence, vocab_, [this](int, int, int id) {
    return log_probs_[id];
  });
}

Segmentation unigram_encode(const UnigramModel& model,
                            std::u32string_view sentence) {
  if (sentence.empty()) return {};
  return viterbi_best(model.lattice(sentence));
}

std::vector<ScoredSegmentation> unigram_nbest(const UnigramModel& model,
                                              std::u32string_view sentence,
                                              int n) {
  if (sentence.empty()) return {ScoredSegmentation{}};
  return nbest(model.lattice(sentence), n);
}

Segmentation unigram_sample(const UnigramModel& model,
                            std::u32string_view sentence, double alpha,
                            Rng& rng) {
  if (sentence.empty()) return {};
  return sample_segmentation(model.lattice(sentence), alpha, rng);
}

namespace {

struct UnigramState {
  std::vector<std::string> pieces;
  std::vector<double> log_probs;
  std::vector<bool> prunable;  // false for single characters

  UnigramModel model() const { return UnigramModel(pieces, log_probs); }
};

void normalize(std::vector<double>& counts, std::vector<double>& log_probs) {
  double total = 0.0;
  for (double& c : counts) {
    c = std::max(c, kMinExpectedCount);
    total += c;
  }
  log_probs.resize(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    log_probs[i] = std::log(counts[i] / total);
  }
}

void run_em(UnigramState& state,
            const std::vector<std::pair<std::u32string, int64_t>>& sentences,
            int iterations) {
  for (int it = 0; it < iterations; ++it) {
    const UnigramModel model = state.model();
    std::vector<double> expected(state.pieces.size(), 0.0);
    for (const auto& [s, freq] : sentences) {
      const Lattice lattice = model.lattice(s);
      const auto post = edge_posteriors(lattice);
      for (int i = 0; i < lattice.length(); ++i) {
        const auto& out = lattice.edges_from(i);
        for (size_t k = 0; k < out.size(); ++k) {
          if (out[k].fallback) continue;
          expected[out[k].token_id - 1] += static_cast<double>(freq) * post[i][k];
        }
      }
    }
    normalize(expected, state.log_probs);
  }
}

// Drops the prunable pieces whose removal loses the least corpus likelihood
// (Viterbi frequency times the score gap to their best re-segmentation).
void prune(UnigramState& state,
           const std::vector<std::pair<std::u32string, int64_t>>& sentences,
           int target_pieces, double fraction) {
  const UnigramModel model = state.model();
  std::vector<double> freq(state.pieces.size(), 0.0);
  for (const auto& [s, count] : sentences) {
    const Lattice lattice = model.lattice(s);
    for (const Span& span : viterbi_best(lattice).spans) {
      const Edge* e = lattice.find_edge(span.start, span.end);
      if (!e->fallback) freq[e->token_id - 1] += static_cast<double>(count);
    }
  }
  struct Candidate {
    double loss;
    size_t index;
  };
  std::vector<Candidate> candidates;
  for (size_t p = 0; p < state.pieces.size(); ++p) {
    if (!state.prunable[p]) continue;
    double loss = 0.0;
    if (freq[p] > 0.0) {
      const std::u32string surface = chars_of(state.pieces[p]);
      const auto alts = nbest(model.lattice(surface), 2);
      double alt_score = model.unk_score() * static_cast<double>(surface.size());
      for (const auto& alt : alts) {
        if (alt.segmentation.size() > 1) {
          alt_score = alt.score;
          break;
        }
      }
      loss = freq[p] * (state.log_probs[p] - alt_score);
    }
    candidates.push_back({loss, p});
  }
  const int current = static_cast<int>(state.pieces.size());
  int remove = std::max(
      1, static_cast<int>(std::floor(fraction * candidates.size())));
  remove = std::min({remove, current - target_pieces,
                     static_cast<int>(candidates.size())});
  if (remove <= 0) return;
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](const Candidate& a, const Candidate& b) {
                     if (a.loss != b.loss) return a.loss < b.loss;
                     return state.pieces[a.index] > state.pieces[b.index];
                   });
  std::vector<bool> drop(state.pieces.size(), false);
  for (int k = 0; k < remove; ++k) drop[candidates[k].index] = true;
  UnigramState next;
  std::vector<double> probs;
  for (size_t p = 0; p < state.pieces.size(); ++p) {
    if (drop[p]) continue;
    next.pieces.push_back(state.pieces[p]);
    next.prunable.push_back(state.prunable[p]);
    probs.push_back(std::exp(state.log_probs[p]));
  }
  normalize(probs, next.log_probs);
  state = std::move(next);
}

}  // namespace

UnigramModel unigram_train(std::span<const std::string> corpus,
                           int target_vocab_size,
                           const UnigramTrainerOptions& options) {
  const auto sentences = count_sentences(corpus);
  if (sentences.empty()) throw std::invalid_argument("unigram_train: empty corpus");
  const std::vector<char32_t> alphabet = alphabet_of(sentences);
  if (target_vocab_size < static_cast<int>(alphabet.size()) + 1) {
    throw std::invalid_argument(
        "unigram_train: target vocabulary " + std::to_string(target_vocab_size) +
        " below alphabet size + 1 (" + std::to_string(alphabet.size() + 1) + ")");
  }
  const int target_pieces = target_vocab_size - 1;

  std::unordered_map<char32_t, double> char_freq;
  std::unordered_map<std::u32string, int64_t, U32Hash> sub_freq;
  for (const auto& [s, freq] : sentences) {
    for (size_t i = 0; i < s.size(); ++i) {
      char_freq[s[i]] += static_cast<double>(freq);
      if (is_space(s[i])) continue;
      for (size_t len = 2; len <= static_cast<size_t>(options.max_piece_chars) &&
                           i + len <= s.size();
           ++len) {
        if (is_space(s[i + len - 1])) break;
        sub_freq[s.substr(i, len)] += freq;
      }
    }
  }
  std::vector<std::pair<int64_t, std::u32string>> seeds;
  for (auto& [sub, freq] : sub_freq) {
    if (freq >= options.min_frequency) seeds.emplace_back(freq, sub);
  }
  std::sort(seeds.begin(), seeds.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  const size_t cap = static_cast<size_t>(std::max(
      0.0, options.seed_cap_factor * target_vocab_size -
               static_cast<double>(alphabet.size())));
  if (seeds.size() > cap) seeds.resize(cap);

  UnigramState state;
  std::vector<double> counts;
  for (char32_t c : alphabet) {
    state.pieces.push_back(to_utf8(c));
    state.prunable.push_back(false);
    counts.push_back(char_freq[c]);
  }
  for (const auto& [freq, sub] : seeds) {
    state.pieces.push_back(to_utf8(sub));
    state.prunable.push_back(true);
    counts.push_back(static_cast<double>(freq));
  }
  normalize(counts, state.log_probs);

  while (true) {
    run_em(state, sentences, options.em_iterations);
    if (static_cast<int>(state.pieces.size()) <= target_pieces) break;
    prune(state, sentences, target_pieces, options.prune_fraction);
  }
  return state.model();
}

// ---------------------------------------------------------------------------
// BPE

namespace {

std::vector<std::string> bpe_vocab_pieces(
    const std::vector<std::string>& alphabet,
    const std::vector<BpeMerge>& merges) {
  std::vector<std::string> pieces = alphabet;
  std::set<std::string> seen(alphabet.begin(), alphabet.end());
  for (const auto& m : merges) {
    if (seen.insert(m.merged).second) pieces.push_back(m.merged);
  }
  return pieces;
}

}  // namespace

BpeModel::BpeModel(std::vector<std::string> alphabet,
                   std::vector<BpeMerge> merges)
    : alphabet_(std::move(alphabet)),
      merges_(std::move(merges)),
      vocab_(bpe_vocab_pieces(alphabet_, merges_)) {
  for (const auto& a : alphabet_) {
    if (chars_of(a).size() != 1) {
      throw std::invalid_argument("BPE alphabet entries must be single characters");
    }
  }
  for (size_t r = 0; r < merges_.size(); ++r) {
    const auto& m = merges_[r];
    const int l = vocab_.lookup(m.left);
    const int rt = vocab_.lookup(m.right);
    if (l <= 0 || rt <= 0 || m.merged != m.left + m.right) {
      throw std::invalid_argument("BPE merge " + std::to_string(r) +
                                  " has unknown operands");
    }
    rank_.emplace(std::make_pair(l, rt), static_cast<int>(r));
    merge_ids_.push_back(vocab_.lookup(m.merged));
  }
  // Operands must be producible before the merge that uses them.
  std::set<std::string> available(alphabet_.begin(), alphabet_.end());
  for (const auto& m : merges_) {
    if (!available.count(m.left) || !available.count(m.right)) {
      throw std::invalid_argument("BPE merge uses a symbol before it exists: " +
                                  m.merged);
    }
    available.insert(m.merged);
  }
}

int BpeModel::merge_rank(int left, int right) const {
  const auto it = rank_.find({left, right});
  return it == rank_.end() ? -1 : it->second;
}

BpeModel bpe_train(std::span<const std::string> corpus, int target_vocab_size) {
  const auto sentences = count_sentences(corpus);
  if (sentences.empty()) throw std::invalid_argument("bpe_train: empty corpus");
  const std::vector<char32_t> alphabet_chars = alphabet_of(sentences);
  if (target_vocab_size < static_cast<int>(alphabet_chars.size())) {
    throw std::invalid_argument("bpe_train: target vocabulary below alphabet size");
  }

  std::vector<std::string> symbols;
  std::unordered_map<std::string, int> symbol_id;
  std::unordered_map<char32_t, int> char_id;
  for (char32_t c : alphabet_chars) {
    char_id[c] = static_cast<int>(symbols.size());
    symbol_id[to_utf8(c)] = static_cast<int>(symbols.size());
    symbols.push_back(to_utf8(c));
  }

  // Maximal whitespace-free runs with multiplicities.
  std::map<std::u32string, int64_t> word_freq;
  for (const auto& [s, freq] : sentences) {
    size_t i = 0;
    while (i < s.size()) {
      if (is_space(s[i])) {
        ++i;
        continue;
      }
      size_t j = i;
      while (j < s.size() && !is_space(s[j])) ++j;
      word_freq[s.substr(i, j - i)] += freq;
      i = j;
    }
  }
  struct Word {
    std::vector<int> syms;
    int64_t freq;
  };
  std::vector<Word> words;
  for (const auto& [w, freq] : word_freq) {
    Word word{{}, freq};
    for (char32_t c : w) word.syms.push_back(char_id[c]);
    words.push_back(std::move(word));
  }

  std::map<std::pair<int, int>, int64_t> pair_count;
  const auto add_pairs = [&](const Word& w, int64_t sign) {
    for (size_t k = 0; k + 1 < w.syms.size(); ++k) {
      auto& c = pair_count[{w.syms[k], w.syms[k + 1]}];
      c += sign * w.freq;
    }
  };
  for (const auto& w : words) add_pairs(w, +1);

  std::vector<BpeMerge> merges;
  int vocab_size = static_cast<int>(alphabet_chars.size());
  while (vocab_size < target_vocab_size) {
    const std::pair<int, int>* best = nullptr;
    int64_t best_count = 0;
    for (const auto& [pair, count] : pair_count) {
      if (count <= 0) continue;
      if (best == nullptr || count > best_count ||
          (count == best_count &&
           std::tie(symbols[pair.first], symbols[pair.second]) <
               std::tie(symbols[best->first], symbols[best->second]))) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr) break;
    const auto [left, right] = *best;
    const std::string merged = symbols[left] + symbols[right];
    int merged_id;
    if (const auto it = symbol_id.find(merged); it != symbol_id.end()) {
      merged_id = it->second;
    } else {
      merged_id = static_cast<int>(symbols.size());
      symbol_id[merged] = merged_id;
      symbols.push_back(merged);
      ++vocab_size;
    }
    merges.push_back({symbols[left], symbols[right], merged});
    for (auto& w : words) {
      bool has = false;
      for (size_t k = 0; k + 1 < w.syms.size(); ++k) {
        if (w.syms[k] == left && w.syms[k + 1] == right) {
          has = true;
          break;
        }
      }
      if (!has) continue;
      add_pairs(w, -1);
      std::vector<int> next;
      for (size_t k = 0; k < w.syms.size(); ++k) {
        if (k + 1 < w.syms.size() && w.syms[k] == left &&
            w.syms[k + 1] == right) {
          next.push_back(merged_id);
          ++k;
        } else {
          next.push_back(w.syms[k]);
        }
      }
      w.syms = std::move(next);
      add_pairs(w, +1);
    }
    for (auto it = pair_count.begin(); it != pair_count.end();) {
      it = it->second == 0 ? pair_count.erase(it) : std::next(it);
    }
  }
  std::vector<std::string> alphabet;
  for (char32_t c : alphabet_chars) alphabet.push_back(to_utf8(c));
  return BpeModel(std::move(alphabet), std::move(merges));
}

Segmentation bpe_encode(const BpeModel& model, std::u32string_view sentence,
                        double dropout_p, Rng& rng) {
  struct Symbol {
    int start, end, id;
  };
  std::vector<Symbol> syms;
  syms.reserve(sentence.size());
  for (int i = 0; i < static_cast<int>(sentence.size()); ++i) {
    const int id = model.vocab().span_id(sentence, i, i + 1);
    syms.push_back({i, i + 1, id < 0 ? Vocabulary::kUnkId : id});
  }
  while (syms.size() > 1) {
    int best_rank = -1;
    size_t best_pos = 0;
    for (size_t k = 0; k + 1 < syms.size(); ++k) {
      const int rank = model.merge_rank(syms[k].id, syms[k + 1].id);
      if (rank < 0) continue;
      if (rng.bernoulli(dropout_p)) continue;
      if (best_rank < 0 || rank < best_rank) {
        best_rank = rank;
        best_pos = k;
      }
    }
    if (best_rank < 0) break;
    syms[best_pos].end = syms[best_pos + 1].end;
    syms[best_pos].id = model.merge_result(best_rank);
    syms.erase(syms.begin() + best_pos + 1);
  }
  Segmentation seg;
  for (const auto& s : syms) seg.spans.push_back({s.start, s.end});
  return seg;
}

Segmentation bpe_encode(const BpeModel& model, std::u32string_view sentence) {
  Rng unused(0);
  return bpe_encode(model, sentence, 0.0, unused);
}

// ---------------------------------------------------------------------------
// MaxMatch

MaxMatchModel maxmatch_build(std::span<const std::string> corpus,
                             int target_vocab_size,
                             std::string continuation_prefix) {
  if (continuation_prefix.empty()) {
    throw std::invalid_argument("maxmatch_build: empty continuation prefix");
  }
  const BpeModel bpe = bpe_train(corpus, target_vocab_size);
  const Vocabulary& bv = bpe.vocab();
  std::vector<bool> initial(bv.size(), false);
  std::vector<bool> internal(bv.size(), false);
  for (const auto& text : corpus) {
    const std::u32string s = chars_of(text);
    if (s.empty()) continue;
    for (const Span& span : bpe_encode(bpe, s).spans) {
      const int id = bv.span_id(s, span.start, span.end);
      if (id <= 0) continue;
      (is_word_start(s, span.start) ? initial : internal)[id] = true;
    }
  }
  std::vector<std::string> pieces;
  std::set<std::string> seen;
  const auto add = [&](std::string p) {
    if (seen.insert(p).second) pieces.push_back(std::move(p));
  };
  for (const auto& a : bpe.alphabet()) add(a);
  for (const auto& a : bpe.alphabet()) {
    if (!is_space(chars_of(a)[0])) add(continuation_prefix + a);
  }
  for (int id = 1; id < bv.size(); ++id) {
    if (chars_of(bv.token(id)).size() < 2) continue;
    if (initial[id]) add(bv.token(id));
    if (internal[id]) add(continuation_prefix + bv.token(id));
  }
  return MaxMatchModel(Vocabulary(pieces, std::move(continuation_prefix)));
}

Segmentation maxmatch_encode(const MaxMatchModel& model,
                             std::u32string_view sentence, double dropout_p,
                             Rng& rng) {
  const Vocabulary& vocab = model.vocab();
  Segmentation seg;
  const int n = static_cast<int>(sentence.size());
  std::vector<int> ends;
  int pos = 0;
  while (pos < n) {
    ends.clear();
    vocab.for_each_match(sentence, pos, [&](int end, int) { ends.push_back(end); });
    int chosen = pos + 1;  // single character, known or UNK
    for (auto it = ends.rbegin(); it != ends.rend(); ++it) {
      if (*it - pos == 1) break;
      if (!rng.bernoulli(dropout_p)) {
        chosen = *it;
        break;
      }
    }
    seg.spans.push_back({pos, chosen});
    pos = chosen;
  }
  return seg;
}

Segmentation maxmatch_encode(const MaxMatchModel& model,
                             std::u32string_view sentence) {
  Rng unused(0);
  return maxmatch_encode(model, sentence, 0.0, unused);
}

// ---------------------------------------------------------------------------
// Tokenizer

std::string_view kind_name(TokenizerKind kind) {
  switch (kind) {
    case TokenizerKind::kUnigram:
      return "unigram";
    case TokenizerKind::kBpe:
      return "bpe";
    case TokenizerKind::kMaxMatch:
      return "maxmatch";
  }
  return "unknown";
}

TokenizerKind parse_kind(std::string_view name) {
  if (name == "unigram") return TokenizerKind::kUnigram;
  if (name == "bpe") return TokenizerKind::kBpe;
  if (name == "maxmatch") return TokenizerKind::kMaxMatch;
  throw std::invalid_argument("unknown tokenizer kind '" + std::string(name) +
                              "' (expected unigram, bpe or maxmatch)");
}

const Vocabulary& Tokenizer::vocab() const {
  return std::visit([](const auto& m) -> const Vocabulary& { return m.vocab(); },
                    model_);
}

Segmentation Tokenizer::encode(std::u32string_view sentence) const {
  switch (kind()) {
    case TokenizerKind::kUnigram:
      return unigram_encode(std::get<UnigramModel>(model_), sentence);
    case TokenizerKind::kBpe:
      return bpe_encode(std::get<BpeModel>(model_), sentence);
    case TokenizerKind::kMaxMatch:
      return maxmatch_encode(std::get<MaxMatchModel>(model_), sentence);
  }
  return {};
}

Segmentation Tokenizer::sample(std::u32string_view sentence,
                               const SamplingOptions& options, Rng& rng) const {
  switch (kind()) {
    case TokenizerKind::kUnigram:
      return unigram_sample(std::get<UnigramModel>(model_), sentence,
                            options.alpha, rng);
    case TokenizerKind::kBpe:
      return bpe_encode(std::get<BpeModel>(model_), sentence, options.dropout_p,
                        rng);
    case TokenizerKind::kMaxMatch:
      return maxmatch_encode(std::get<MaxMatchModel>(model_), sentence,
                             options.dropout_p, rng);
  }
  return {};
}

Tokenizer train_tokenizer(TokenizerKind kind,
                          std::span<const std::string> corpus,
                          int target_vocab_size) {
  switch (kind) {
    case TokenizerKind::kUnigram:
      return Tokenizer(unigram_train(corpus, target_vocab_size));
    case TokenizerKind::kBpe:
      return Tokenizer(bpe_train(corpus, target_vocab_size));
    case TokenizerKind::kMaxMatch:
      return Tokenizer(maxmatch_build(corpus, target_vocab_size));
  }
  throw std::invalid_argument("unknown tokenizer kind");
}

std::vector<int> token_ids(const Vocabulary& vocab,
                           std::u32string_view sentence,
                           const Segmentation& seg) {
  std::vector<int> ids;
  ids.reserve(seg.spans.size());
  for (const Span& s : seg.spans) {
    const int id = vocab.span_id(sentence, s.start, s.end);
    ids.push_back(id < 0 ? Vocabulary::kUnkId : id);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Persistence

using nlohmann::json;

std::string serialize_tokenizer(const Tokenizer& tokenizer) {
  json doc;
  doc["kind"] = std::string(kind_name(tokenizer.kind()));
  doc["version"] = kTokenizerFormatVersion;
  doc["vocab"] = tokenizer.vocab().tokens();
  switch (tokenizer.kind()) {
    case TokenizerKind::kUnigram: {
      const auto& m = std::get<UnigramModel>(tokenizer.model());
      doc["log_probs"] = m.log_probs();
      doc["continuation_prefix"] = m.vocab().continuation_prefix();
      break;
    }
    case TokenizerKind::kBpe: {
      const auto& m = std::get<BpeModel>(tokenizer.model());
      doc["alphabet"] = m.alphabet();
      json merges = json::array();
      for (const auto& mg : m.merges()) merges.push_back({mg.left, mg.right});
      doc["merges"] = std::move(merges);
      break;
    }
    case TokenizerKind::kMaxMatch: {
      const auto& m = std::get<MaxMatchModel>(tokenizer.model());
      doc["continuation_prefix"] = m.vocab().continuation_prefix();
      break;
    }
  }
  return doc.dump(1) + "\n";
}

Tokenizer parse_tokenizer(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed tokenizer file: ") + e.what());
  }
  try {
    if (!doc.is_object()) throw std::runtime_error("not a JSON object");
    const int version = doc.at("version").get<int>();
    if (version != kTokenizerFormatVersion) {
      throw std::runtime_error("unsupported tokenizer version " +
                               std::to_string(version));
    }
    const TokenizerKind kind = parse_kind(doc.at("kind").get<std::string>());
    const auto vocab = doc.at("vocab").get<std::vector<std::string>>();
    if (vocab.empty() || vocab[0] != Vocabulary::kUnkToken) {
      throw std::runtime_error("vocab must start with <unk>");
    }
    const std::vector<std::string> pieces(vocab.begin() + 1, vocab.end());
    Tokenizer result;
    switch (kind) {
      case TokenizerKind::kUnigram: {
        const auto lp = doc.at("log_probs").get<std::vector<double>>();
        if (lp.size() != vocab.size()) {
          throw std::runtime_error("log_probs length differs from vocab");
        }
        UnigramModel m(pieces, std::vector<double>(lp.begin() + 1, lp.end()),
                       doc.at("continuation_prefix").get<std::string>());
        if (m.unk_score() != lp[0]) {
          throw std::runtime_error("inconsistent <unk> score");
        }
        result = Tokenizer(std::move(m));
        break;
      }
      case TokenizerKind::kBpe: {
        std::vector<BpeMerge> merges;
        for (const auto& item : doc.at("merges")) {
          const auto lr = item.get<std::vector<std::string>>();
          if (lr.size() != 2) throw std::runtime_error("merge must be a pair");
          merges.push_back({lr[0], lr[1], lr[0] + lr[1]});
        }
        BpeModel m(doc.at("alphabet").get<std::vector<std::string>>(),
                   std::move(merges));
        if (m.vocab().tokens() != vocab) {
          throw std::runtime_error("BPE vocab inconsistent with merges");
        }
        result = Tokenizer(std::move(m));
        break;
      }
      case TokenizerKind::kMaxMatch:
        result = Tokenizer(MaxMatchModel(Vocabulary(
            pieces, doc.at("continuation_prefix").get<std::string>())));
        break;
    }
    return result;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed tokenizer file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("malformed tokenizer file: ") + e.what());
  }
}

void save_tokenizer(const Tokenizer& tokenizer,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize_tokenizer(tokenizer);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Tokenizer load_tokenizer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_tokenizer(ss.str());
}

}  // namespace retok
