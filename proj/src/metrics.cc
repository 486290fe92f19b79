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

#include "retok/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace retok {

std::vector<double> per_label_f1(std::span<const int> predictions,
                                 std::span<const int> gold, int num_labels) {
  if (predictions.size() != gold.size()) {
    throw std::invalid_argument("per_label_f1: length mismatch");
  }
  if (gold.empty()) throw std::invalid_argument("per_label_f1: empty input");
  std::vector<int64_t> tp(num_labels), fp(num_labels), fn(num_labels);
  for (size_t i = 0; i < gold.size(); ++i) {
    const int p = predictions[i], g = gold[i];
    if (p < 0 || p >= num_labels || g < 0 || g >= num_labels) {
      throw std::out_of_range("per_label_f1: label out of range");
    }
    if (p == g) {
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  std::vector<double> f1(num_labels);
  for (int l = 0; l < num_labels; ++l) {
    const int64_t denom = 2 * tp[l] + fp[l] + fn[l];
    f1[l] = denom == 0 ? std::numeric_limits<double>::quiet_NaN()
                       : 2.0 * tp[l] / static_cast<double>(denom);
  }
  return f1;
}

double macro_f1(std::span<const int> predictions, std::span<const int> gold,
                int num_labels) {
  const auto f1 = per_label_f1(predictions, gold, num_labels);
  double total = 0.0;
  int counted = 0;
  for (double v : f1) {
    if (std::isnan(v)) continue;
    total += v;
    ++counted;
  }
  return total / counted;
}

double bi_tag_accuracy(const Segmentation& hyp, const Segmentation& ref) {
  const auto a = to_bi_tags(hyp);
  const auto b = to_bi_tags(ref);
  if (a.size() != b.size()) {
    throw std::invalid_argument("bi_tag_accuracy: lengths " +
                                std::to_string(a.size()) + " and " +
                                std::to_string(b.size()));
  }
  if (a.empty()) return 1.0;
  size_t same = 0;
  for (size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

double bi_tag_accuracy(std::span<const Segmentation> hyps,
                       std::span<const Segmentation> refs) {
  if (hyps.size() != refs.size()) {
    throw std::invalid_argument("bi_tag_accuracy: corpus size mismatch");
  }
  int64_t same = 0, total = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    const auto a = to_bi_tags(hyps[i]);
    const auto b = to_bi_tags(refs[i]);
    if (a.size() != b.size()) {
      throw std::invalid_argument("bi_tag_accuracy: length mismatch at " +
                                  std::to_string(i));
    }
    for (size_t k = 0; k < a.size(); ++k) same += a[k] == b[k];
    total += static_cast<int64_t>(a.size());
  }
  if (total == 0) throw std::invalid_argument("bi_tag_accuracy: empty corpus");
  return static_cast<double>(same) / static_cast<double>(total);
}

double unk_ratio(std::span<const std::u32string> sentences,
                 std::span<const Segmentation> segmentations,
                 const Vocabulary& vocab, const CharTable* known_chars) {
  if (sentences.size() != segmentations.size()) {
    throw std::invalid_argument("unk_ratio: length mismatch");
  }
  int64_t total = 0, unknown = 0;
  for (size_t i = 0; i < sentences.size(); ++i) {
    const std::u32string& s = sentences[i];
    for (const Span& sp : segmentations[i].spans) {
      ++total;
      if (vocab.span_id(s, sp.start, sp.end) >= 0) continue;
      if (known_chars && sp.end - sp.start == 1 &&
          !known_chars->contains(s[sp.start])) {
        continue;
      }
      ++unknown;
    }
  }
  if (total == 0) throw std::invalid_argument("unk_ratio: no tokens");
  return static_cast<double>(unknown) / static_cast<double>(total);
}

double avg_tokens(std::span<const Segmentation> segmentations) {
  if (segmentations.empty()) throw std::invalid_argument("avg_tokens: empty");
  int64_t total = 0;
  for (const auto& s : segmentations) total += s.size();
  return static_cast<double>(total) / static_cast<double>(segmentations.size());
}

double unigram_perplexity(std::span<const std::u32string> sentences,
                          std::span<const Segmentation> segmentations) {
  if (sentences.size() != segmentations.size()) {
    throw std::invalid_argument("unigram_perplexity: length mismatch");
  }
  std::unordered_map<std::u32string, int64_t> counts;
  int64_t total = 0;
  for (size_t i = 0; i < sentences.size(); ++i) {
    for (const Span& sp : segmentations[i].spans) {
      ++counts[sentences[i].substr(sp.start, sp.end - sp.start)];
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("unigram_perplexity: no tokens");
  // Sum in sorted order so the result does not depend on hash layout.
  std::vector<int64_t> sorted;
  sorted.reserve(counts.size());
  for (const auto& [tok, c] : counts) sorted.push_back(c);
  std::sort(sorted.begin(), sorted.end());
  double entropy = 0.0;
  for (int64_t c : sorted) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

void EvalReport::set(const std::string& metric, const std::string& method,
                     double v) {
  if (std::find(methods.begin(), methods.end(), method) == methods.end()) {
    methods.push_back(method);
  }
  values[metric][method] = v;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["metadata"] = metadata;
  j["methods"] = methods;
  nlohmann::json vals = nlohmann::json::object();
  for (const auto& [metric, by_method] : values) {
    for (const auto& [method, v] : by_method) vals[metric][method] = v;
  }
  j["values"] = vals;
  nlohmann::json per_label = nlohmann::json::object();
  for (const auto& [method, f1s] : per_label_f1) {
    nlohmann::json arr = nlohmann::json::array();
    for (double v : f1s) {
      if (std::isnan(v)) {
        arr.push_back(nullptr);
      } else {
        arr.push_back(v);
      }
    }
    per_label[method] = arr;
  }
  j["per_label_f1"] = per_label;
  return j.dump(1) + "\n";
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  for (const auto& [k, v] : metadata) out << k << ": " << v << "\n";
  size_t metric_w = 6;
  for (const auto& [metric, _] : values) metric_w = std::max(metric_w, metric.size());
  char buf[64];
  out << std::string(metric_w, ' ');
  for (const auto& m : methods) {
    std::snprintf(buf, sizeof(buf), "  %12s", m.c_str());
    out << buf;
  }
  out << "\n";
  for (const auto& [metric, by_method] : values) {
    out << metric << std::string(metric_w - metric.size(), ' ');
    for (const auto& m : methods) {
      auto it = by_method.find(m);
      if (it == by_method.end()) {
        std::snprintf(buf, sizeof(buf), "  %12s", "-");
      } else {
        std::snprintf(buf, sizeof(buf), "  %12.4f", it->second);
      }
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace retok
