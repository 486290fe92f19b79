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
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace retok {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace

std::vector<std::string> Segmentation::tokens(
    std::u32string_view sentence) const {
  std::vector<std::string> out;
  out.reserve(spans.size());
  for (const auto& s : spans) {
    out.push_back(to_utf8(sentence.substr(s.start, s.length())));
  }
  return out;
}

bool Segmentation::covers(int length) const {
  int pos = 0;
  for (const auto& s : spans) {
    if (s.start != pos || s.end <= s.start) return false;
    pos = s.end;
  }
  return pos == length && (length > 0 || spans.empty());
}

Segmentation segmentation_from_tokens(std::u32string_view sentence,
                                      const std::vector<std::string>& tokens) {
  Segmentation seg;
  int pos = 0;
  for (const auto& tok : tokens) {
    const std::u32string chars = chars_of(tok);
    if (chars.empty() ||
        sentence.substr(pos, chars.size()) != std::u32string_view(chars)) {
      throw std::invalid_argument("tokens do not match sentence at char " +
                                  std::to_string(pos));
    }
    seg.spans.push_back({pos, pos + static_cast<int>(chars.size())});
    pos += static_cast<int>(chars.size());
  }
  if (pos != static_cast<int>(sentence.size())) {
    throw std::invalid_argument("tokens do not cover the sentence");
  }
  return seg;
}

Segmentation segmentation_from_lengths(const std::vector<int>& lengths) {
  Segmentation seg;
  int pos = 0;
  for (int len : lengths) {
    if (len <= 0) throw std::invalid_argument("span length must be positive");
    seg.spans.push_back({pos, pos + len});
    pos += len;
  }
  return seg;
}

std::vector<bool> to_bi_tags(const Segmentation& seg) {
  std::vector<bool> tags;
  for (const auto& s : seg.spans) {
    tags.push_back(true);
    for (int k = 1; k < s.length(); ++k) tags.push_back(false);
  }
  return tags;
}

Segmentation from_bi_tags(const std::vector<bool>& tags) {
  Segmentation seg;
  const int n = static_cast<int>(tags.size());
  int start = 0;
  for (int k = 1; k <= n; ++k) {
    if (k == n || tags[k]) {
      seg.spans.push_back({start, k});
      start = k;
    }
  }
  return seg;
}

void Lattice::add_edge(int start, Edge edge) {
  if (start < 0 || start >= length() || edge.end <= start ||
      edge.end > length()) {
    throw std::out_of_range("edge outside lattice");
  }
  if (!std::isfinite(edge.weight)) {
    throw std::invalid_argument("lattice edge weight must be finite");
  }
  auto& out = edges_[start];
  const auto pos = std::lower_bound(
      out.begin(), out.end(), edge.end,
      [](const Edge& e, int end) { return e.end < end; });
  if (pos != out.end() && pos->end == edge.end) {
    throw std::invalid_argument("duplicate lattice edge");
  }
  out.insert(pos, edge);
}

int Lattice::num_edges() const {
  int n = 0;
  for (const auto& out : edges_) n += static_cast<int>(out.size());
  return n;
}

const Edge* Lattice::find_edge(int start, int end) const {
  if (start < 0 || start >= length()) return nullptr;
  for (const auto& e : edges_[start]) {
    if (e.end == end) return &e;
  }
  return nullptr;
}

double Lattice::score(const Segmentation& seg) const {
  double total = 0.0;
  for (auto it = seg.spans.rbegin(); it != seg.spans.rend(); ++it) {
    const Edge* e = find_edge(it->start, it->end);
    if (e == nullptr) {
      throw std::invalid_argument("segmentation uses a span absent from the "
                                  "lattice");
    }
    total = e->weight + total;
  }
  return total;
}

Lattice build_lattice(std::u32string_view sentence, const Vocabulary& vocab,
                      const WeightFn& weights) {
  const int n = static_cast<int>(sentence.size());
  if (n == 0) throw std::invalid_argument("build_lattice: empty sentence");
  Lattice lattice(n);
  std::vector<bool> reachable(n + 1, false);
  reachable[0] = true;
  for (int i = 0; i < n; ++i) {
    bool any = false;
    vocab.for_each_match(sentence, i, [&](int end, int id) {
      lattice.add_edge(i, {end, id, weights(i, end, id), false});
      any = true;
      if (reachable[i]) reachable[end] = true;
    });
    if (!any && reachable[i]) {
      lattice.add_edge(i, {i + 1, Vocabulary::kUnkId,
                           weights(i, i + 1, Vocabulary::kUnkId), true});
      reachable[i + 1] = true;
    }
  }
  return lattice;
}

Segmentation viterbi_best(const Lattice& lattice) {
  const int n = lattice.length();
  std::vector<double> best(n + 1, kNegInf);
  std::vector<int> choice(n + 1, -1);
  best[n] = 0.0;
  for (int i = n - 1; i >= 0; --i) {
    const auto& out = lattice.edges_from(i);
    // Edges are sorted by end, so ">=" keeps the longest among ties.
    for (int k = 0; k < static_cast<int>(out.size()); ++k) {
      if (best[out[k].end] == kNegInf) continue;
      const double s = out[k].weight + best[out[k].end];
      if (choice[i] < 0 || s >= best[i]) {
        best[i] = s;
        choice[i] = k;
      }
    }
  }
  if (n > 0 && choice[0] < 0) throw std::logic_error("lattice has no path");
  Segmentation seg;
  for (int i = 0; i < n;) {
    const Edge& e = lattice.edges_from(i)[choice[i]];
    seg.spans.push_back({i, e.end});
    i = e.end;
  }
  return seg;
}

std::vector<ScoredSegmentation> nbest(const Lattice& lattice, int n) {
  if (n < 1) throw std::invalid_argument("nbest: n must be >= 1");
  const int len = lattice.length();
  struct Entry {
    double score;
    int edge;         // index into edges_from(pos), -1 at the final node
    int suffix_rank;  // rank within the list at the edge's end
  };
  std::vector<std::vector<Entry>> lists(len + 1);
  lists[len].push_back({0.0, -1, 0});
  std::vector<Entry> cand;
  for (int i = len - 1; i >= 0; --i) {
    const auto& out = lattice.edges_from(i);
    cand.clear();
    for (int k = 0; k < static_cast<int>(out.size()); ++k) {
      const auto& suffix = lists[out[k].end];
      for (int r = 0; r < static_cast<int>(suffix.size()); ++r) {
        cand.push_back({out[k].weight + suffix[r].score, k, r});
      }
    }
    const auto better = [&](const Entry& a, const Entry& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.edge != b.edge) return out[a.edge].end > out[b.edge].end;
      return a.suffix_rank < b.suffix_rank;
    };
    const size_t keep = std::min(cand.size(), static_cast<size_t>(n));
    std::partial_sort(cand.begin(), cand.begin() + keep, cand.end(), better);
    lists[i].assign(cand.begin(), cand.begin() + keep);
  }
  std::vector<ScoredSegmentation> result;
  for (int r = 0; r < static_cast<int>(lists[0].size()); ++r) {
    ScoredSegmentation item;
    item.score = lists[0][r].score;
    int pos = 0;
    int rank = r;
    while (pos < len) {
      const Entry& e = lists[pos][rank];
      const int end = lattice.edges_from(pos)[e.edge].end;
      item.segmentation.spans.push_back({pos, end});
      pos = end;
      rank = e.suffix_rank;
    }
    result.push_back(std::move(item));
  }
  return result;
}

namespace {

std::vector<double> forward_scores(const Lattice& lattice, double alpha) {
  const int n = lattice.length();
  std::vector<double> fwd(n + 1, kNegInf);
  fwd[0] = 0.0;
  for (int i = 0; i < n; ++i) {
    if (fwd[i] == kNegInf) continue;
    for (const auto& e : lattice.edges_from(i)) {
      fwd[e.end] = log_add(fwd[e.end], fwd[i] + alpha * e.weight);
    }
  }
  return fwd;
}

}  // namespace

double log_partition(const Lattice& lattice, double alpha) {
  return forward_scores(lattice, alpha)[lattice.length()];
}

std::vector<std::vector<double>> edge_posteriors(const Lattice& lattice,
                                                 double alpha) {
  const int n = lattice.length();
  const std::vector<double> fwd = forward_scores(lattice, alpha);
  std::vector<double> bwd(n + 1, kNegInf);
  bwd[n] = 0.0;
  for (int i = n - 1; i >= 0; --i) {
    for (const auto& e : lattice.edges_from(i)) {
      bwd[i] = log_add(bwd[i], alpha * e.weight + bwd[e.end]);
    }
  }
  const double z = fwd[n];
  std::vector<std::vector<double>> post(n);
  for (int i = 0; i < n; ++i) {
    const auto& out = lattice.edges_from(i);
    post[i].assign(out.size(), 0.0);
    if (fwd[i] == kNegInf) continue;
    for (size_t k = 0; k < out.size(); ++k) {
      if (bwd[out[k].end] == kNegInf) continue;
      post[i][k] = std::exp(fwd[i] + alpha * out[k].weight + bwd[out[k].end] - z);
    }
  }
  return post;
}

Segmentation sample_segmentation(const Lattice& lattice, double alpha,
                                 Rng& rng) {
  if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
  const int n = lattice.length();
  const std::vector<double> fwd = forward_scores(lattice, alpha);
  if (fwd[n] == kNegInf) throw std::logic_error("lattice has no path");

  // Incoming edges per end position.
  std::vector<std::vector<std::pair<int, double>>> incoming(n + 1);
  for (int i = 0; i < n; ++i) {
    if (fwd[i] == kNegInf) continue;
    for (const auto& e : lattice.edges_from(i)) {
      incoming[e.end].push_back({i, fwd[i] + alpha * e.weight});
    }
  }
  std::vector<Span> reversed;
  int pos = n;
  while (pos > 0) {
    const auto& in = incoming[pos];
    const double u = rng.uniform();
    double acc = 0.0;
    int chosen = in.back().first;
    for (const auto& [start, logit] : in) {
      acc += std::exp(logit - fwd[pos]);
      if (u < acc) {
        chosen = start;
        break;
      }
    }
    reversed.push_back({chosen, pos});
    pos = chosen;
  }
  Segmentation seg;
  seg.spans.assign(reversed.rbegin(), reversed.rend());
  return seg;
}

std::vector<Segmentation> enumerate_all(std::u32string_view sentence,
                                        const Vocabulary& vocab, int max_len) {
  if (max_len > kMaxEnumerationChars) {
    throw std::invalid_argument("enumerate_all: max_len above " +
                                std::to_string(kMaxEnumerationChars));
  }
  if (static_cast<int>(sentence.size()) > max_len) {
    throw std::length_error("enumerate_all: sentence of " +
                            std::to_string(sentence.size()) +
                            " chars exceeds max_len " +
                            std::to_string(max_len));
  }
  std::vector<Segmentation> out;
  if (sentence.empty()) return out;
  const Lattice lattice =
      build_lattice(sentence, vocab, [](int, int, int) { return 0.0; });
  const int n = lattice.length();
  Segmentation current;
  std::function<void(int)> walk = [&](int pos) {
    if (pos == n) {
      out.push_back(current);
      return;
    }
    for (const auto& e : lattice.edges_from(pos)) {
      current.spans.push_back({pos, e.end});
      walk(e.end);
      current.spans.pop_back();
    }
  };
  walk(0);
  return out;
}

std::string render_lattice(const Lattice& lattice,
                           std::u32string_view sentence) {
  const int n = lattice.length();
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::setw(6) << "";
  for (int j = 1; j <= n; ++j) os << std::setw(8) << to_utf8(sentence[j - 1]);
  os << '\n';
  for (int i = 0; i < n; ++i) {
    os << std::setw(6) << to_utf8(sentence[i]);
    for (int j = 1; j <= n; ++j) {
      if (j <= i) {
        os << std::setw(8) << "";
        continue;
      }
      const Edge* e = lattice.find_edge(i, j);
      if (e == nullptr) {
        os << std::setw(8) << ".";
      } else if (e->fallback) {
        os << std::setw(8) << "?";
      } else {
        os << std::setw(8) << e->weight;
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace retok
