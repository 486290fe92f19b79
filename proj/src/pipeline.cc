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

#include "retok/pipeline.h"

#include <openssl/evp.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "retok/json_util.h"
#include "retok/utf8.h"

namespace retok {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string dump(const nlohmann::json& j) { return j.dump(1) + "\n"; }

template <typename T>
void check_range(T v, T lo, T hi, const std::string& field) {
  if (v < lo || v > hi) {
    std::ostringstream msg;
    msg << field << ": must be in [" << lo << ", " << hi << "], got " << v;
    throw ConfigError(msg.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic corpus

nlohmann::json to_json(const SynthSpec& s) {
  return {{"train", s.train},
          {"valid", s.valid},
          {"test", s.test},
          {"alphabet", s.alphabet},
          {"num_pieces", s.num_pieces},
          {"signals_per_label", s.signals_per_label},
          {"signal_pieces", s.signal_pieces},
          {"num_labels", s.num_labels},
          {"min_words", s.min_words},
          {"max_words", s.max_words},
          {"signal_rate", s.signal_rate},
          {"zipf", s.zipf},
          {"label_noise", s.label_noise}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j,
                               const std::string& path) {
  SynthSpec s;
  JsonReader r(j, path);
  r.get("train", s.train);
  r.get("valid", s.valid);
  r.get("test", s.test);
  r.get("alphabet", s.alphabet);
  r.get("num_pieces", s.num_pieces);
  r.get("signals_per_label", s.signals_per_label);
  r.get("signal_pieces", s.signal_pieces);
  r.get("num_labels", s.num_labels);
  r.get("min_words", s.min_words);
  r.get("max_words", s.max_words);
  r.get("signal_rate", s.signal_rate);
  r.get("zipf", s.zipf);
  r.get("label_noise", s.label_noise);
  r.finish();
  check_range(s.train, 1, 10'000'000, r.field("train"));
  check_range(s.valid, 1, 10'000'000, r.field("valid"));
  check_range(s.test, 1, 10'000'000, r.field("test"));
  check_range(s.alphabet, 2, 26, r.field("alphabet"));
  check_range(s.num_labels, 2, 100, r.field("num_labels"));
  check_range(s.signals_per_label, 1, 100, r.field("signals_per_label"));
  check_range(s.signal_pieces, 2, 100, r.field("signal_pieces"));
  if (s.num_labels * s.signals_per_label >
      s.signal_pieces * (s.signal_pieces - 1)) {
    throw ConfigError(r.field("signal_pieces") +
                      ": too few for num_labels * signals_per_label ordered pairs");
  }
  check_range(s.num_pieces, s.signal_pieces + 1, 10'000, r.field("num_pieces"));
  check_range(s.min_words, 1, 1000, r.field("min_words"));
  check_range(s.max_words, s.min_words, 1000, r.field("max_words"));
  check_range(s.signal_rate, 0.0, 1.0, r.field("signal_rate"));
  check_range(s.zipf, 0.0, 10.0, r.field("zipf"));
  check_range(s.label_noise, 0.0, 1.0, r.field("label_noise"));
  return s;
}

SynthCorpus generate_synth(const SynthSpec& spec, uint64_t seed) {
  // Round-trips through the validator.
  SynthCorpus c;
  c.spec = synth_spec_from_json(to_json(spec));

  Rng rng = Rng::stream(seed, "synth-pieces");
  std::set<std::string> seen;
  const int max_pieces = spec.alphabet * spec.alphabet * spec.alphabet;
  if (spec.num_pieces > max_pieces / 2) {
    throw ConfigError("num_pieces: too many for the alphabet");
  }
  while (static_cast<int>(c.pieces.size()) < spec.num_pieces) {
    std::string p;
    const int len = rng.below(3) == 0 ? 3 : 2;
    for (int k = 0; k < len; ++k) p += static_cast<char>('a' + rng.below(spec.alphabet));
    if (seen.insert(p).second) c.pieces.push_back(p);
  }

  // Signal words are ordered pairs of the most frequent pieces, dealt to the
  // labels in a seeded order.
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < spec.signal_pieces; ++a) {
    for (int b = 0; b < spec.signal_pieces; ++b) {
      if (a != b) pairs.emplace_back(a, b);
    }
  }
  rng.shuffle(pairs.begin(), pairs.end());
  c.signals.resize(spec.num_labels);
  std::vector<std::string> signal_words;
  size_t next_pair = 0;
  for (int k = 0; k < spec.signals_per_label; ++k) {
    for (int l = 0; l < spec.num_labels; ++l) {
      std::string pa, pb;
      do {
        if (next_pair == pairs.size()) {
          throw ConfigError("signal_pieces: signal words collide");
        }
        const auto [a, b] = pairs[next_pair++];
        pa = c.pieces[a];
        pb = c.pieces[b];
      } while (std::find(signal_words.begin(), signal_words.end(), pa + pb) !=
               signal_words.end());
      c.signals[l].push_back({pa + pb, pa, pb});
      signal_words.push_back(pa + pb);
    }
  }

  std::vector<double> cumulative;
  double total = 0.0;
  for (int r = 0; r < spec.num_pieces; ++r) {
    total += std::pow(r + 1.0, -spec.zipf);
    cumulative.push_back(total);
  }
  auto draw_piece = [&](Rng& g) -> const std::string& {
    const double u = g.uniform() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return c.pieces[std::min<size_t>(it - cumulative.begin(), c.pieces.size() - 1)];
  };
  auto contains_signal = [&](const std::string& w) {
    for (const auto& s : signal_words) {
      if (w.find(s) != std::string::npos) return true;
    }
    return false;
  };
  auto distractor = [&](Rng& g) {
    for (;;) {
      std::string w;
      for (int n = 1 + g.below(2); n > 0; --n) w += draw_piece(g);
      if (!contains_signal(w)) return w;
    }
  };

  int64_t next_id = 0;
  auto gen = [&](const char* name, int count, std::vector<LabeledExample>& out) {
    Rng g = Rng::stream(seed, std::string("synth-") + name);
    for (int i = 0; i < count; ++i) {
      const int words =
          spec.min_words + g.below(spec.max_words - spec.min_words + 1);
      std::vector<std::string> ws;
      for (int w = 0; w < words; ++w) ws.push_back(distractor(g));
      int label;
      if (g.bernoulli(spec.signal_rate)) {
        label = g.below(spec.num_labels);
        const auto& sig = c.signals[label][g.below(spec.signals_per_label)];
        ws[g.below(ws.size())] = sig[0];
      } else {
        label = g.below(spec.num_labels);
      }
      if (g.bernoulli(spec.label_noise)) {
        label = (label + 1 + g.below(spec.num_labels - 1)) % spec.num_labels;
      }
      std::string text;
      for (const auto& w : ws) {
        if (!text.empty()) text += ' ';
        text += w;
      }
      out.push_back({text, label, next_id++});
    }
  };
  gen("train", spec.train, c.data.train);
  gen("valid", spec.valid, c.data.valid);
  gen("test", spec.test, c.data.test);
  c.data.num_labels = spec.num_labels;
  return c;
}

void write_synth(const SynthCorpus& c, const fs::path& dir) {
  Staging st(dir);
  save_jsonl(st.path("train.jsonl"), c.data.train);
  save_jsonl(st.path("valid.jsonl"), c.data.valid);
  save_jsonl(st.path("test.jsonl"), c.data.test);
  nlohmann::json signals = nlohmann::json::array();
  for (size_t l = 0; l < c.signals.size(); ++l) {
    for (const auto& s : c.signals[l]) {
      signals.push_back({{"label", l}, {"word", s[0]}, {"pieces", {s[1], s[2]}}});
    }
  }
  st.write("synth.json", dump({{"spec", to_json(c.spec)},
                               {"pieces", c.pieces},
                               {"signals", signals}}));
  st.commit();
}

// ---------------------------------------------------------------------------
// Configuration

std::string_view opt_name(OptKind kind) {
  switch (kind) {
    case OptKind::kSpan:
      return "span";
    case OptKind::kBiTag:
      return "bitag";
    case OptKind::kUnigramOpt:
      return "unigram_opt";
  }
  return "";
}

OptKind parse_opt(std::string_view name) {
  if (name == "span") return OptKind::kSpan;
  if (name == "bitag") return OptKind::kBiTag;
  if (name == "unigram_opt") return OptKind::kUnigramOpt;
  throw std::invalid_argument("unknown optimized tokenizer: " + std::string(name));
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json opt = nlohmann::json::array();
  for (OptKind k : c.opt) opt.push_back(opt_name(k));
  return {{"version", kConfigVersion},
          {"dataset_dir", c.dataset_dir.string()},
          {"nfkc", c.nfkc},
          {"tokenizer",
           {{"kind", kind_name(c.tokenizer)}, {"vocab_size", c.vocab_size}}},
          {"classifier", to_json(c.classifier)},
          {"candidates",
           {{"n", c.n},
            {"mode", mode_name(c.mode)},
            {"alpha", c.sampling.alpha},
            {"dropout_p", c.sampling.dropout_p}}},
          {"opt", opt},
          {"neural", to_json(c.neural)},
          {"seeds", c.seeds},
          {"sweep_n", c.sweep_n},
          {"threads", c.threads}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                             const fs::path& base_dir) {
  ExperimentConfig c;
  JsonReader r(j, "");
  int version = 0;
  r.require("version", version);
  if (version != kConfigVersion) {
    throw ConfigError("version: unsupported config version " +
                      std::to_string(version));
  }
  std::string dataset_dir = c.dataset_dir.string();
  r.get("dataset_dir", dataset_dir);
  c.dataset_dir = dataset_dir;
  if (c.dataset_dir.is_relative() && !base_dir.empty()) {
    c.dataset_dir = base_dir / c.dataset_dir;
  }
  r.get("nfkc", c.nfkc);

  {
    JsonReader t = r.child("tokenizer");
    std::string kind(kind_name(c.tokenizer));
    t.get("kind", kind);
    try {
      c.tokenizer = parse_kind(kind);
    } catch (const std::invalid_argument&) {
      throw ConfigError(t.field("kind") + ": expected unigram, bpe or maxmatch");
    }
    t.get("vocab_size", c.vocab_size);
    t.finish();
    check_range(c.vocab_size, 2, 10'000'000, t.field("vocab_size"));
  }

  r.child("classifier");
  if (j.contains("classifier")) {
    c.classifier = classifier_config_from_json(j.at("classifier"), "classifier");
  }

  {
    JsonReader t = r.child("candidates");
    t.get("n", c.n);
    std::string mode(mode_name(c.mode));
    t.get("mode", mode);
    try {
      c.mode = parse_mode(mode);
    } catch (const std::invalid_argument&) {
      throw ConfigError(t.field("mode") + ": expected nbest or sample");
    }
    t.get("alpha", c.sampling.alpha);
    t.get("dropout_p", c.sampling.dropout_p);
    t.finish();
    check_range(c.n, 1, 100'000, t.field("n"));
    check_range(c.sampling.alpha, 0.0, 1e6, t.field("alpha"));
    check_range(c.sampling.dropout_p, 0.0, 1.0, t.field("dropout_p"));
  }

  if (j.contains("opt")) {
    std::vector<std::string> names;
    r.get("opt", names);
    c.opt.clear();
    for (const auto& n : names) {
      try {
        const OptKind k = parse_opt(n);
        if (std::find(c.opt.begin(), c.opt.end(), k) != c.opt.end()) {
          throw ConfigError("opt: duplicate entry " + n);
        }
        c.opt.push_back(k);
      } catch (const std::invalid_argument&) {
        throw ConfigError("opt: expected span, bitag or unigram_opt, got \"" +
                          n + "\"");
      }
    }
  } else {
    r.child("opt");
  }

  r.child("neural");
  if (j.contains("neural")) {
    c.neural = neural_config_from_json(j.at("neural"), "neural");
  }

  if (j.contains("seeds")) {
    std::vector<int64_t> seeds;
    r.get("seeds", seeds);
    if (seeds.empty()) throw ConfigError("seeds: must not be empty");
    c.seeds.clear();
    std::set<int64_t> uniq;
    for (int64_t s : seeds) {
      if (s < 0) throw ConfigError("seeds: must be non-negative");
      if (!uniq.insert(s).second) throw ConfigError("seeds: duplicate seed");
      c.seeds.push_back(static_cast<uint64_t>(s));
    }
  } else {
    r.child("seeds");
  }
  r.get("sweep_n", c.sweep_n);
  if (c.sweep_n.empty()) throw ConfigError("sweep_n: must not be empty");
  for (int n : c.sweep_n) check_range(n, 1, 100'000, std::string("sweep_n"));
  r.get("threads", c.threads);
  check_range(c.threads, 1, 1024, std::string("threads"));
  r.finish();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError(path.string() + ": no such config file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Artifacts

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* kHex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& path) {
  return sha256_hex(read_file(path));
}

Staging::Staging(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  tmp_ = dir_ / (".staging-" + std::to_string(::getpid()));
  fs::remove_all(tmp_);
  fs::create_directories(tmp_);
}

Staging::~Staging() {
  std::error_code ec;
  fs::remove_all(tmp_, ec);
}

fs::path Staging::path(const std::string& name) const { return tmp_ / name; }

void Staging::write(const std::string& name, std::string_view contents) {
  std::ofstream out(path(name), std::ios::binary | std::ios::trunc);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw std::runtime_error("cannot write " + path(name).string());
}

std::vector<fs::path> Staging::commit() {
  if (committed_) throw std::logic_error("Staging::commit called twice");
  std::vector<fs::path> names;
  for (const auto& e : fs::directory_iterator(tmp_)) {
    names.push_back(e.path().filename());
  }
  std::sort(names.begin(), names.end());
  std::vector<fs::path> out;
  for (const auto& n : names) {
    fs::rename(tmp_ / n, dir_ / n);
    out.push_back(dir_ / n);
  }
  committed_ = true;
  return out;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j = {{"version", kToolVersion},
                      {"command", command},
                      {"config", config},
                      {"inputs", inputs},
                      {"outputs", outputs},
                      {"wall_clock_seconds", wall_clock_seconds}};
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    if (!j.at("seed").is_null()) m.seed = j.at("seed").get<uint64_t>();
    m.config = j.at("config");
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

fs::path Layout::seed_dir(uint64_t seed) const {
  return out / ("seed-" + std::to_string(seed));
}
fs::path Layout::classifier(uint64_t seed) const {
  return seed_dir(seed) / "classifier";
}
fs::path Layout::dhat(uint64_t seed) const { return seed_dir(seed) / "dhat.jsonl"; }
fs::path Layout::opt(uint64_t seed, OptKind kind) const {
  return seed_dir(seed) / std::string(opt_name(kind));
}
fs::path Layout::manifest(const fs::path& dir, const std::string& stage) const {
  return dir / (stage + ".manifest.json");
}

// ---------------------------------------------------------------------------
// Stages

namespace {

using Clock = std::chrono::steady_clock;

void note(const StageOptions& o, const std::string& msg) {
  if (!o.quiet) std::fprintf(stderr, "[retok] %s\n", msg.c_str());
}

std::string rel(const Layout& layout, const fs::path& p) {
  return p.lexically_relative(layout.out).generic_string();
}

fs::path with_suffix(const fs::path& base, const std::string& suffix) {
  return fs::path(base.string() + suffix);
}

std::vector<fs::path> model_files(const fs::path& base) {
  return {with_suffix(base, ".json"), with_suffix(base, ".weights.json"),
          with_suffix(base, ".weights.bin")};
}

struct Producer {
  std::string command;
  fs::path manifest;
};

// Verifies that |files| exist and still match the manifest of the stage that
// produced them, and that the inputs recorded there are themselves current.
// Returns (relative path -> hash) of |files|.
std::map<std::string, std::string> require_artifacts(
    const Layout& layout, const std::vector<fs::path>& files,
    const Producer& producer, bool force) {
  const std::string hint = "; run `retok " + producer.command + "` first";
  for (const auto& f : files) {
    if (!fs::exists(f)) throw MissingArtifact(f.string() + " not found" + hint);
  }
  if (!fs::exists(producer.manifest)) {
    throw MissingArtifact(producer.manifest.string() + " not found" + hint);
  }
  const RunManifest m = RunManifest::from_json(read_json(producer.manifest));
  std::map<std::string, std::string> hashes;
  for (const auto& f : files) {
    const std::string key = rel(layout, f);
    const std::string h = sha256_file(f);
    hashes[key] = h;
    const auto it = m.outputs.find(key);
    if (!force && (it == m.outputs.end() || it->second != h)) {
      throw MissingArtifact(f.string() + " does not match its manifest" + hint);
    }
  }
  if (!force) {
    for (const auto& [key, h] : m.inputs) {
      const fs::path p = layout.out / key;
      if (key.rfind("dataset:", 0) == 0 || !fs::exists(p)) continue;
      if (sha256_file(p) != h) {
        throw MissingArtifact(
            files.front().string() + " is stale: " + key +
            " changed after it was built; rerun `retok " + producer.command +
            "` (or pass --force)");
      }
    }
  }
  return hashes;
}

std::map<std::string, std::string> dataset_inputs(const ExperimentConfig& c) {
  std::map<std::string, std::string> out;
  for (const char* split : {"train", "valid", "test"}) {
    const fs::path p = c.dataset_dir / (std::string(split) + ".jsonl");
    if (fs::exists(p)) out[std::string("dataset:") + split] = sha256_file(p);
  }
  return out;
}

Dataset load_data(const ExperimentConfig& c) {
  if (!fs::exists(c.dataset_dir / "train.jsonl")) {
    throw MissingArtifact((c.dataset_dir / "train.jsonl").string() +
                          " not found; run `retok gen-synth` or point "
                          "dataset_dir at a JSONL corpus");
  }
  return load_dataset(c.dataset_dir, std::nullopt, c.nfkc);
}

// Writes the manifest into the staging area and commits everything.
void finish_stage(const Layout& layout, Staging& st, const fs::path& dir,
                  const std::string& stage, const std::string& command,
                  std::optional<uint64_t> seed, const ExperimentConfig& config,
                  std::map<std::string, std::string> inputs,
                  Clock::time_point start) {
  RunManifest m;
  m.command = command;
  m.seed = seed;
  m.config = to_json(config);
  m.inputs = std::move(inputs);
  for (const auto& e : fs::directory_iterator(st.path(""))) {
    m.outputs[rel(layout, dir / e.path().filename())] = sha256_file(e.path());
  }
  m.wall_clock_seconds =
      std::chrono::duration<double>(Clock::now() - start).count();
  st.write(stage + ".manifest.json", dump(m.to_json()));
  st.commit();
}

Producer tokenizer_producer(const Layout& l) {
  return {"train-tokenizer", l.manifest(l.out, "train-tokenizer")};
}
Producer classifier_producer(const Layout& l, uint64_t seed) {
  return {"train-downstream --seed " + std::to_string(seed),
          l.manifest(l.seed_dir(seed), "train-downstream")};
}
Producer dhat_producer(const Layout& l, uint64_t seed) {
  return {"collect --seed " + std::to_string(seed),
          l.manifest(l.seed_dir(seed), "collect")};
}
Producer opt_producer(const Layout& l, uint64_t seed) {
  return {"train-opt --seed " + std::to_string(seed),
          l.manifest(l.seed_dir(seed), "train-opt")};
}

std::vector<fs::path> opt_files(const Layout& l, uint64_t seed, OptKind k) {
  if (k == OptKind::kUnigramOpt) return {with_suffix(l.opt(seed, k), ".json")};
  return model_files(l.opt(seed, k));
}

CollectOptions collect_options(const ExperimentConfig& c, uint64_t seed,
                               int n, int threads) {
  CollectOptions o;
  o.n = n;
  o.mode = c.mode;
  o.sampling = c.sampling;
  o.seed = seed;
  o.threads = threads;
  return o;
}

nlohmann::json epochs_json(const std::vector<TokenizerEpoch>& log) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : log) {
    arr.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
  }
  return arr;
}

}  // namespace

void run_train_tokenizer(const ExperimentConfig& config,
                         const StageOptions& options) {
  const auto start = Clock::now();
  const Layout layout{options.out};
  const Dataset data = load_data(config);
  std::vector<std::string> texts;
  for (const auto& ex : data.train) texts.push_back(ex.text);
  note(options, "training " + std::string(kind_name(config.tokenizer)) +
                    " tokenizer (vocab " + std::to_string(config.vocab_size) +
                    ")");
  const Tokenizer tok = train_tokenizer(config.tokenizer, texts, config.vocab_size);
  Staging st(layout.out);
  st.write("tokenizer.json", serialize_tokenizer(tok));
  finish_stage(layout, st, layout.out, "train-tokenizer", "train-tokenizer",
               std::nullopt, config, dataset_inputs(config), start);
}

double run_train_downstream(const ExperimentConfig& config, uint64_t seed,
                            const StageOptions& options) {
  const auto start = Clock::now();
  const Layout layout{options.out};
  auto inputs = require_artifacts(layout, {layout.tokenizer()},
                                  tokenizer_producer(layout), options.force);
  const Tokenizer tok = load_tokenizer(layout.tokenizer());
  const Dataset data = load_data(config);
  note(options, "seed " + std::to_string(seed) + ": training classifier");
  const auto result = train_classifier(config.classifier, data, tok, seed);
  const fs::path dir = layout.seed_dir(seed);
  Staging st(dir);
  ClassifierMeta meta{inputs.begin()->second, result.best_epoch,
                      result.best_valid_f1};
  save_classifier(result.model, meta, st.path("classifier"));
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : result.log) {
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"valid_f1", e.valid_f1}});
  }
  st.write("classifier.log.json", dump({{"best_epoch", result.best_epoch},
                                        {"best_valid_f1", result.best_valid_f1},
                                        {"epochs", log}}));
  auto ds = dataset_inputs(config);
  inputs.insert(ds.begin(), ds.end());
  finish_stage(layout, st, dir, "train-downstream", "train-downstream", seed,
               config, inputs, start);
  note(options, "seed " + std::to_string(seed) + ": best valid macro-F1 " +
                    std::to_string(result.best_valid_f1) + " at epoch " +
                    std::to_string(result.best_epoch));
  return result.best_valid_f1;
}

void run_collect(const ExperimentConfig& config, uint64_t seed,
                 const StageOptions& options) {
  const auto start = Clock::now();
  const Layout layout{options.out};
  auto inputs = require_artifacts(layout, {layout.tokenizer()},
                                  tokenizer_producer(layout), options.force);
  const auto clf = require_artifacts(layout, model_files(layout.classifier(seed)),
                                     classifier_producer(layout, seed),
                                     options.force);
  inputs.insert(clf.begin(), clf.end());
  const Tokenizer tok = load_tokenizer(layout.tokenizer());
  const ClassifierModel model = load_classifier(layout.classifier(seed));
  const Dataset data = load_data(config);
  note(options, "seed " + std::to_string(seed) + ": collecting " +
                    std::to_string(config.n) + " candidates per sentence");
  const auto result = collect_best(
      data.train, model, tok, collect_options(config, seed, config.n, options.threads));

  // Statistics of the harvested tokenization against the original one.
  std::vector<std::u32string> texts;
  std::vector<Segmentation> best, original;
  double best_loss = 0.0, base_loss = 0.0;
  int changed = 0;
  for (size_t i = 0; i < result.records.size(); ++i) {
    texts.push_back(chars_of(result.records[i].text));
    best.push_back(result.records[i].segmentation);
    original.push_back(tok.encode(texts.back()));
    best_loss += result.records[i].loss;
    base_loss += result.base_losses[i];
    if (best.back() != original.back()) ++changed;
  }
  const double n = static_cast<double>(result.records.size());
  const nlohmann::json stats = {
      {"records", result.records.size()},
      {"changed", changed},
      {"mean_selected_loss", best_loss / n},
      {"mean_original_loss", base_loss / n},
      {"avg_tokens", {{"dhat", avg_tokens(best)}, {"original", avg_tokens(original)}}},
      {"perplexity",
       {{"dhat", unigram_perplexity(texts, best)},
        {"original", unigram_perplexity(texts, original)}}}};

  const fs::path dir = layout.seed_dir(seed);
  Staging st(dir);
  save_retok_dataset(result.records, st.path("dhat.jsonl"));
  st.write("dhat.stats.json", dump(stats));
  auto ds = dataset_inputs(config);
  inputs.insert(ds.begin(), ds.end());
  finish_stage(layout, st, dir, "collect", "collect", seed, config, inputs, start);
  note(options, "seed " + std::to_string(seed) + ": " + std::to_string(changed) +
                    " of " + std::to_string(result.records.size()) +
                    " sentences retokenized");
}

OptTrainSummary run_train_opt(const ExperimentConfig& config, uint64_t seed,
                              const StageOptions& options) {
  const auto start = Clock::now();
  const Layout layout{options.out};
  auto inputs = require_artifacts(layout, {layout.tokenizer()},
                                  tokenizer_producer(layout), options.force);
  const auto dh = require_artifacts(layout, {layout.dhat(seed)},
                                    dhat_producer(layout, seed), options.force);
  inputs.insert(dh.begin(), dh.end());
  const Tokenizer tok = load_tokenizer(layout.tokenizer());
  const auto records = load_retok_dataset(layout.dhat(seed));
  const Dataset data = load_data(config);
  const CharTable chars = build_char_table(data.train);
  const Vocabulary& vocab = tok.vocab();

  std::vector<std::u32string> texts;
  std::vector<Segmentation> gold;
  for (const auto& r : records) {
    texts.push_back(chars_of(r.text));
    gold.push_back(r.segmentation);
  }

  OptTrainSummary summary;
  nlohmann::json logs = nlohmann::json::object();
  const fs::path dir = layout.seed_dir(seed);
  Staging st(dir);
  for (OptKind kind : config.opt) {
    const std::string name(opt_name(kind));
    note(options, "seed " + std::to_string(seed) + ": training " + name);
    if (kind == OptKind::kSpan) {
      const auto r = train_span_tokenizer(records, vocab, chars, config.neural, seed);
      save_span_tokenizer(r.model, st.path(name));
      summary.accuracy[name] = r.log.empty() ? 0.0 : r.log.back().accuracy;
      summary.epochs[name] = static_cast<int>(r.log.size());
      logs[name] = epochs_json(r.log);
    } else if (kind == OptKind::kBiTag) {
      const auto r = train_bitag(records, chars, config.neural, seed);
      save_bitag_tokenizer(r.model, st.path(name));
      summary.accuracy[name] = r.log.empty() ? 0.0 : r.log.back().accuracy;
      summary.epochs[name] = static_cast<int>(r.log.size());
      logs[name] = epochs_json(r.log);
    } else {
      const UnigramModel m = build_unigram_opt(records, vocab, chars);
      save_tokenizer(Tokenizer(m), st.path(name + ".json"));
      std::vector<Segmentation> hyp;
      for (const auto& t : texts) hyp.push_back(unigram_encode(m, t));
      summary.accuracy[name] = bi_tag_accuracy(hyp, gold);
      summary.epochs[name] = 0;
    }
    note(options, "seed " + std::to_string(seed) + ": " + name +
                      " reproducibility " + std::to_string(summary.accuracy[name]));
  }
  st.write("opt.summary.json", dump({{"accuracy", summary.accuracy},
                                     {"epochs", summary.epochs},
                                     {"logs", logs}}));
  finish_stage(layout, st, dir, "train-opt", "train-opt", seed, config, inputs,
               start);
  return summary;
}

EvalReport run_evaluate(const ExperimentConfig& config, uint64_t seed,
                        const std::string& split, const StageOptions& options) {
  const auto start = Clock::now();
  const Layout layout{options.out};
  auto inputs = require_artifacts(layout, {layout.tokenizer()},
                                  tokenizer_producer(layout), options.force);
  auto add = [&](const std::map<std::string, std::string>& m) {
    inputs.insert(m.begin(), m.end());
  };
  add(require_artifacts(layout, model_files(layout.classifier(seed)),
                        classifier_producer(layout, seed), options.force));
  for (OptKind k : config.opt) {
    add(require_artifacts(layout, opt_files(layout, seed, k),
                          opt_producer(layout, seed), options.force));
  }
  const Tokenizer tok = load_tokenizer(layout.tokenizer());
  const ClassifierModel model = load_classifier(layout.classifier(seed));
  const Dataset data = load_data(config);
  const auto& examples = data.split(split);
  if (examples.empty()) throw std::runtime_error("split " + split + " is empty");
  const CharTable chars = build_char_table(data.train);
  const Vocabulary& vocab = tok.vocab();
  const int labels = model.config().num_labels;

  std::vector<std::u32string> texts;
  std::vector<int> gold;
  for (const auto& ex : examples) {
    texts.push_back(chars_of(ex.text));
    gold.push_back(ex.label);
  }

  EvalReport report;
  report.metadata = {{"split", split},
                     {"seed", std::to_string(seed)},
                     {"n", std::to_string(config.n)},
                     {"mode", std::string(mode_name(config.mode))},
                     {"tokenizer", std::string(kind_name(config.tokenizer))},
                     {"examples", std::to_string(examples.size())},
                     {"version", std::string(kToolVersion)}};

  auto score = [&](const std::string& method, const std::vector<Segmentation>& segs,
                   std::vector<int> predictions) {
    if (predictions.empty()) {
      for (size_t i = 0; i < segs.size(); ++i) {
        predictions.push_back(
            predict_label(model, token_ids(vocab, texts[i], segs[i])));
      }
    }
    report.methods.push_back(method);
    report.set("macro_f1", method, macro_f1(predictions, gold, labels));
    report.per_label_f1[method] = per_label_f1(predictions, gold, labels);
    report.set("unk_ratio", method, unk_ratio(texts, segs, vocab, &chars));
    report.set("avg_tokens", method, avg_tokens(segs));
    report.set("perplexity", method, unigram_perplexity(texts, segs));
  };

  note(options, "seed " + std::to_string(seed) + ": evaluating on " + split);
  {
    std::vector<Segmentation> segs;
    for (const auto& t : texts) segs.push_back(tok.encode(t));
    score("original", segs, {});
  }
  for (OptKind k : config.opt) {
    std::vector<Segmentation> segs;
    if (k == OptKind::kSpan) {
      const SpanTokenizer span = load_span_tokenizer(layout.opt(seed, k));
      for (const auto& t : texts) segs.push_back(span_tokenize(span, t));
    } else if (k == OptKind::kBiTag) {
      const BiTagTokenizer bt = load_bitag_tokenizer(layout.opt(seed, k));
      for (const auto& t : texts) segs.push_back(bitag_tokenize(bt, t));
    } else {
      const Tokenizer uo = load_tokenizer(with_suffix(layout.opt(seed, k), ".json"));
      for (const auto& t : texts) segs.push_back(uo.encode(t));
    }
    score(std::string(opt_name(k)), segs, {});
  }
  const OracleResult oracle = oracle_select(
      examples, model, tok, collect_options(config, seed, config.n, options.threads));
  score("oracle", oracle.chosen, oracle.predictions);

  const fs::path dir = layout.seed_dir(seed);
  Staging st(dir);
  st.write("eval-" + split + ".json", report.to_json());
  auto ds = dataset_inputs(config);
  inputs.insert(ds.begin(), ds.end());
  finish_stage(layout, st, dir, "evaluate-" + split, "evaluate", seed, config,
               inputs, start);
  return report;
}

EvalReport aggregate_reports(const std::vector<uint64_t>& seeds,
                             const std::vector<EvalReport>& reports) {
  if (reports.empty() || seeds.size() != reports.size()) {
    throw std::invalid_argument("aggregate_reports: mismatched inputs");
  }
  EvalReport out;
  out.methods = reports.front().methods;
  out.metadata = reports.front().metadata;
  out.metadata.erase("seed");
  std::string seed_list;
  for (uint64_t s : seeds) seed_list += (seed_list.empty() ? "" : ",") + std::to_string(s);
  out.metadata["seeds"] = seed_list;
  for (const auto& [metric, by_method] : reports.front().values) {
    for (const auto& method : out.methods) {
      double total = 0.0;
      int count = 0;
      for (size_t r = 0; r < reports.size(); ++r) {
        const auto& v = reports[r].values;
        const auto m = v.find(metric);
        if (m == v.end() || !m->second.count(method)) continue;
        const double x = m->second.at(method);
        out.set(metric + ".seed-" + std::to_string(seeds[r]), method, x);
        total += x;
        ++count;
      }
      if (count) out.set(metric, method, total / count);
    }
  }
  return out;
}

EvalReport run_sweep_n(const ExperimentConfig& config, uint64_t seed,
                       const std::string& split, const StageOptions& options) {
  const auto start = Clock::now();
  const Layout layout{options.out};
  auto inputs = require_artifacts(layout, {layout.tokenizer()},
                                  tokenizer_producer(layout), options.force);
  const auto clf = require_artifacts(layout, model_files(layout.classifier(seed)),
                                     classifier_producer(layout, seed),
                                     options.force);
  inputs.insert(clf.begin(), clf.end());
  const Tokenizer tok = load_tokenizer(layout.tokenizer());
  const ClassifierModel model = load_classifier(layout.classifier(seed));
  const Dataset data = load_data(config);
  const auto& examples = data.split(split);

  EvalReport report;
  report.metadata = {{"split", split},
                     {"seed", std::to_string(seed)},
                     {"mode", std::string(mode_name(config.mode))},
                     {"version", std::string(kToolVersion)}};
  for (int n : config.sweep_n) {
    note(options, "seed " + std::to_string(seed) + ": oracle with N=" +
                      std::to_string(n));
    const auto r = oracle_select(examples, model, tok,
                                 collect_options(config, seed, n, options.threads));
    const std::string col = "N=" + std::to_string(n);
    report.methods.push_back(col);
    report.set("oracle_f1", col, r.f1);
    report.set("original_f1", col, r.base_f1);
  }
  const fs::path dir = layout.seed_dir(seed);
  Staging st(dir);
  st.write("sweep-" + split + ".json", report.to_json());
  auto ds = dataset_inputs(config);
  inputs.insert(ds.begin(), ds.end());
  finish_stage(layout, st, dir, "sweep-n-" + split, "sweep-n", seed, config,
               inputs, start);
  return report;
}

namespace {

EvalReport aggregate_and_write(const ExperimentConfig& config,
                               const std::vector<uint64_t>& seeds,
                               const std::vector<EvalReport>& reports,
                               const std::string& kind, const std::string& split,
                               const StageOptions& options,
                               Clock::time_point start) {
  const Layout layout{options.out};
  std::map<std::string, std::string> inputs;
  for (uint64_t s : seeds) {
    const fs::path p = layout.seed_dir(s) / (kind + "-" + split + ".json");
    inputs[rel(layout, p)] = sha256_file(p);
  }
  EvalReport agg = aggregate_reports(seeds, reports);
  Staging st(layout.out);
  st.write(kind + "-" + split + ".json", agg.to_json());
  finish_stage(layout, st, layout.out, kind + "-" + split, kind, std::nullopt,
               config, inputs, start);
  return agg;
}

}  // namespace

EvalReport run_evaluate_all(const ExperimentConfig& config,
                            const std::vector<uint64_t>& seeds,
                            const std::string& split,
                            const StageOptions& options) {
  const auto start = Clock::now();
  std::vector<EvalReport> reports;
  for (uint64_t s : seeds) reports.push_back(run_evaluate(config, s, split, options));
  return aggregate_and_write(config, seeds, reports, "eval", split, options, start);
}

EvalReport run_sweep_all(const ExperimentConfig& config,
                         const std::vector<uint64_t>& seeds,
                         const std::string& split, const StageOptions& options) {
  const auto start = Clock::now();
  std::vector<EvalReport> reports;
  for (uint64_t s : seeds) reports.push_back(run_sweep_n(config, s, split, options));
  return aggregate_and_write(config, seeds, reports, "sweep", split, options, start);
}

}  // namespace retok
