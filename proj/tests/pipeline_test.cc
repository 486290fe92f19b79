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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "gtest/gtest.h"
#include "retok/json_util.h"

namespace retok {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() /
                     ("retok-pipeline-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

SynthSpec tiny_spec() {
  SynthSpec s;
  s.train = 80;
  s.valid = 30;
  s.test = 30;
  s.min_words = 3;
  s.max_words = 5;
  return s;
}

ExperimentConfig tiny_config(const fs::path& data) {
  ExperimentConfig c;
  c.dataset_dir = data;
  c.vocab_size = 120;
  c.classifier.embed_dim = 6;
  c.classifier.hidden = 6;
  c.classifier.epochs = 2;
  c.classifier.lr = 3e-3;
  c.n = 5;
  c.neural.char_dim = 4;
  c.neural.hidden = 4;
  c.neural.mlp_hidden = 4;
  c.neural.proj_dim = 4;
  c.neural.epochs = 2;
  c.seeds = {1};
  c.sweep_n = {1, 3, 5};
  return c;
}

// ---------------------------------------------------------------------------

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Staging, InvisibleUntilCommit) {
  const fs::path d = fresh_dir("staging");
  {
    Staging st(d);
    st.write("a.txt", "hello");
    EXPECT_FALSE(fs::exists(d / "a.txt"));
    const auto paths = st.commit();
    ASSERT_EQ(paths.size(), 1u);
  }
  EXPECT_EQ(slurp(d / "a.txt"), "hello");
  {
    Staging st(d);
    st.write("b.txt", "dropped");
  }
  EXPECT_FALSE(fs::exists(d / "b.txt"));
  for (const auto& e : fs::directory_iterator(d)) {
    EXPECT_EQ(e.path().filename(), "a.txt");
  }
  fs::remove_all(d);
}

TEST(RunManifest, RoundTrip) {
  RunManifest m;
  m.command = "collect";
  m.seed = 7;
  m.config = {{"x", 1}};
  m.inputs = {{"tokenizer.json", "abc"}};
  m.outputs = {{"seed-7/dhat.jsonl", "def"}};
  m.wall_clock_seconds = 1.5;
  const RunManifest r = RunManifest::from_json(m.to_json());
  EXPECT_EQ(r.to_json(), m.to_json());
  RunManifest none;
  none.command = "train-tokenizer";
  EXPECT_FALSE(RunManifest::from_json(none.to_json()).seed.has_value());
  EXPECT_THROW(RunManifest::from_json({{"command", "x"}}), std::runtime_error);
}

// ---------------------------------------------------------------------------

TEST(ExperimentConfigJson, RoundTripAndDefaults) {
  const ExperimentConfig d;
  EXPECT_EQ(d.vocab_size, 800);
  EXPECT_EQ(d.n, 25);
  EXPECT_EQ(d.seeds.size(), 3u);
  const ExperimentConfig c = tiny_config("/data");
  const ExperimentConfig r = experiment_config_from_json(to_json(c));
  EXPECT_EQ(to_json(r), to_json(c));
}

TEST(ExperimentConfigJson, Strict) {
  const nlohmann::json ok = {{"version", 1}};
  EXPECT_NO_THROW(experiment_config_from_json(ok));
  EXPECT_THROW(experiment_config_from_json(nlohmann::json::object()), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"version", 2}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"version", 1}, {"bogus", 1}}),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json(
                   {{"version", 1}, {"tokenizer", {{"kind", "wordpiece"}}}}),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json(
                   {{"version", 1}, {"tokenizer", {{"vocab_size", "big"}}}}),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json(
                   {{"version", 1}, {"candidates", {{"n", 0}}}}),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json(
                   {{"version", 1}, {"candidates", {{"dropout_p", 1.5}}}}),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"version", 1}, {"seeds", {1, 1}}}),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"version", 1}, {"seeds", {-1}}}),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json(
                   {{"version", 1}, {"opt", {"span", "span"}}}),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"version", 1}, {"opt", {"crf"}}}),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json(
                   {{"version", 1}, {"classifier", {{"hidden", 0}}}}),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json(
                   {{"version", 1}, {"neural", {{"epochs", 1000}}}}),
               ConfigError);
}

TEST(ExperimentConfigJson, RelativeDatasetDir) {
  const auto c = experiment_config_from_json(
      {{"version", 1}, {"dataset_dir", "../data"}}, "/x/configs");
  EXPECT_EQ(c.dataset_dir, fs::path("/x/configs/../data"));
  const auto a = experiment_config_from_json(
      {{"version", 1}, {"dataset_dir", "/abs"}}, "/x/configs");
  EXPECT_EQ(a.dataset_dir, fs::path("/abs"));
}

TEST(ExperimentConfigJson, MissingFile) {
  EXPECT_THROW(load_experiment_config("/nonexistent/exp.json"), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Synth, SpecValidation) {
  EXPECT_NO_THROW(synth_spec_from_json(to_json(SynthSpec{})));
  EXPECT_THROW(synth_spec_from_json({{"signal_pieces", 2}, {"signals_per_label", 2}}),
               ConfigError);
  EXPECT_THROW(synth_spec_from_json({{"trian", 10}}), ConfigError);
  EXPECT_THROW(synth_spec_from_json({{"min_words", 5}, {"max_words", 3}}),
               ConfigError);
}

TEST(Synth, DeterministicPerSeed) {
  const auto a = generate_synth(tiny_spec(), 3);
  const auto b = generate_synth(tiny_spec(), 3);
  const auto c = generate_synth(tiny_spec(), 4);
  ASSERT_EQ(a.data.train.size(), 80u);
  for (size_t i = 0; i < a.data.train.size(); ++i) {
    EXPECT_EQ(a.data.train[i].text, b.data.train[i].text);
    EXPECT_EQ(a.data.train[i].label, b.data.train[i].label);
  }
  bool differs = false;
  for (size_t i = 0; i < a.data.train.size(); ++i) {
    differs |= a.data.train[i].text != c.data.train[i].text;
  }
  EXPECT_TRUE(differs);
}

TEST(Synth, SignalsAreTopPiecePairs) {
  const SynthSpec spec;
  const auto c = generate_synth(spec, 0);
  std::set<std::string> top(c.pieces.begin(), c.pieces.begin() + spec.signal_pieces);
  std::set<std::string> words;
  ASSERT_EQ(c.signals.size(), static_cast<size_t>(spec.num_labels));
  for (const auto& label : c.signals) {
    ASSERT_EQ(label.size(), static_cast<size_t>(spec.signals_per_label));
    for (const auto& s : label) {
      EXPECT_EQ(s[0], s[1] + s[2]);
      EXPECT_TRUE(top.count(s[1]));
      EXPECT_TRUE(top.count(s[2]));
      EXPECT_TRUE(words.insert(s[0]).second);
    }
  }
  // Signal words occur only as whole words of signal-bearing sentences.
  int carrying = 0;
  for (const auto& ex : c.data.train) {
    std::istringstream in(ex.text);
    std::string w;
    int n = 0;
    while (in >> w) {
      if (words.count(w)) ++n;
      for (const auto& s : words) {
        if (!words.count(w)) EXPECT_EQ(w.find(s), std::string::npos) << w;
      }
    }
    EXPECT_LE(n, 1);
    carrying += n;
  }
  EXPECT_GT(carrying, spec.train * spec.signal_rate * 0.9);
  EXPECT_LT(carrying, spec.train * spec.signal_rate * 1.1);
}

TEST(Synth, WriteAndLoad) {
  const fs::path d = fresh_dir("synth");
  const auto c = generate_synth(tiny_spec(), 1);
  write_synth(c, d);
  const Dataset back = load_dataset(d);
  ASSERT_EQ(back.train.size(), c.data.train.size());
  EXPECT_EQ(back.test.back().text, c.data.test.back().text);
  EXPECT_EQ(back.test.back().id, c.data.test.back().id);
  const auto meta = nlohmann::json::parse(slurp(d / "synth.json"));
  EXPECT_EQ(synth_spec_from_json(meta.at("spec")).train, 80);
  fs::remove_all(d);
}

// ---------------------------------------------------------------------------

class TinyPipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fresh_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    write_synth(generate_synth(tiny_spec(), 1), root_ / "data");
    config_ = tiny_config(root_ / "data");
    options_.out = root_ / "run";
    options_.quiet = true;
  }
  void TearDown() override { fs::remove_all(root_); }

  void run_all() {
    run_train_tokenizer(config_, options_);
    run_train_downstream(config_, 1, options_);
    run_collect(config_, 1, options_);
    run_train_opt(config_, 1, options_);
  }

  // Every non-manifest file under the run directory with its contents.
  std::map<std::string, std::string> snapshot() const {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(options_.out)) {
      if (!e.is_regular_file()) continue;
      const std::string name = e.path().filename().string();
      if (name.find(".manifest.json") != std::string::npos) continue;
      files[fs::relative(e.path(), options_.out).string()] = slurp(e.path());
    }
    return files;
  }

  fs::path root_;
  ExperimentConfig config_;
  StageOptions options_;
};

TEST_F(TinyPipeline, EndToEndAndByteIdenticalRerun) {
  run_all();
  const EvalReport r = run_evaluate(config_, 1, "test", options_);
  for (const char* m : {"original", "span", "bitag", "unigram_opt", "oracle"}) {
    EXPECT_TRUE(r.values.at("macro_f1").count(m)) << m;
  }
  EXPECT_GE(r.values.at("macro_f1").at("oracle"),
            r.values.at("macro_f1").at("original"));
  EXPECT_EQ(r.values.at("unk_ratio").at("span"), 0.0);
  EXPECT_EQ(r.values.at("unk_ratio").at("unigram_opt"), 0.0);

  const auto first = snapshot();
  EXPECT_TRUE(first.count("seed-1/dhat.jsonl"));
  EXPECT_TRUE(first.count("seed-1/span.json"));
  run_all();
  run_evaluate(config_, 1, "test", options_);
  EXPECT_EQ(snapshot(), first);

  // Manifests name every output with its hash.
  const RunManifest m = RunManifest::from_json(nlohmann::json::parse(
      slurp(options_.out / "seed-1" / "collect.manifest.json")));
  EXPECT_EQ(m.command, "collect");
  ASSERT_TRUE(m.seed.has_value());
  EXPECT_EQ(*m.seed, 1u);
  EXPECT_EQ(m.outputs.at("seed-1/dhat.jsonl"),
            sha256_file(options_.out / "seed-1" / "dhat.jsonl"));
  EXPECT_TRUE(m.inputs.count("tokenizer.json"));
}

TEST_F(TinyPipeline, SweepAtNOneMatchesOriginal) {
  run_train_tokenizer(config_, options_);
  run_train_downstream(config_, 1, options_);
  const EvalReport r = run_sweep_n(config_, 1, "test", options_);
  const auto& oracle = r.values.at("oracle_f1");
  const auto& original = r.values.at("original_f1");
  EXPECT_NEAR(oracle.at("N=1"), original.at("N=1"), 1e-12);
  EXPECT_LE(oracle.at("N=1"), oracle.at("N=3"));
  EXPECT_LE(oracle.at("N=3"), oracle.at("N=5"));
}

TEST_F(TinyPipeline, MissingUpstreamArtifacts) {
  EXPECT_THROW(run_train_downstream(config_, 1, options_), MissingArtifact);
  run_train_tokenizer(config_, options_);
  EXPECT_THROW(run_collect(config_, 1, options_), MissingArtifact);
  EXPECT_THROW(run_evaluate(config_, 1, "test", options_), MissingArtifact);
  try {
    run_collect(config_, 1, options_);
  } catch (const MissingArtifact& e) {
    EXPECT_NE(std::string(e.what()).find("train-downstream"), std::string::npos)
        << e.what();
  }
}

TEST_F(TinyPipeline, StaleArtifactsAreRefused) {
  run_train_tokenizer(config_, options_);
  run_train_downstream(config_, 1, options_);
  run_collect(config_, 1, options_);
  // Retraining the classifier with a different seed under the same directory
  // is simulated by editing its weights.
  const fs::path weights = options_.out / "seed-1" / "classifier.weights.json";
  ASSERT_TRUE(fs::exists(weights));
  {
    std::ofstream out(weights, std::ios::app);
    out << " ";
  }
  EXPECT_THROW(run_collect(config_, 1, options_), MissingArtifact);
  StageOptions forced = options_;
  forced.force = true;
  EXPECT_NO_THROW(run_collect(config_, 1, forced));
}

TEST_F(TinyPipeline, RetrainedTokenizerInvalidatesDownstream) {
  run_train_tokenizer(config_, options_);
  run_train_downstream(config_, 1, options_);
  config_.tokenizer = TokenizerKind::kBpe;
  run_train_tokenizer(config_, options_);
  EXPECT_THROW(run_collect(config_, 1, options_), MissingArtifact);
}

TEST_F(TinyPipeline, AggregateKeepsPerSeedValues) {
  EvalReport a, b;
  a.methods = b.methods = {"original"};
  a.set("macro_f1", "original", 0.5);
  b.set("macro_f1", "original", 0.7);
  const EvalReport agg = aggregate_reports({1, 2}, {a, b});
  EXPECT_NEAR(agg.values.at("macro_f1").at("original"), 0.6, 1e-15);
  EXPECT_EQ(agg.values.at("macro_f1.seed-1").at("original"), 0.5);
  EXPECT_EQ(agg.values.at("macro_f1.seed-2").at("original"), 0.7);
}

// ---------------------------------------------------------------------------
// Exit codes of the command-line driver.

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RETOK_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  const fs::path d = fresh_dir("cli");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("train-tokenizer --out " + d.string()), 2);
  EXPECT_EQ(run_cli("collect --config " + (d / "missing.json").string() +
                    " --out " + d.string()),
            2);
  {
    std::ofstream out(d / "bad.json");
    out << R"({"version": 1, "nope": 3})";
  }
  EXPECT_EQ(run_cli("collect --config " + (d / "bad.json").string() + " --out " +
                    (d / "run").string()),
            2);
  // Config validation happens before any output is written.
  EXPECT_FALSE(fs::exists(d / "run"));
  {
    std::ofstream out(d / "ok.json");
    out << R"({"version": 1, "dataset_dir": "data", "seeds": [1]})";
  }
  EXPECT_EQ(run_cli("collect --config " + (d / "ok.json").string() + " --out " +
                    (d / "run").string()),
            3);
  EXPECT_EQ(run_cli("gen-synth --out " + (d / "data").string() + " --quiet"), 0);
  EXPECT_TRUE(fs::exists(d / "data" / "train.jsonl"));
  EXPECT_EQ(run_cli("evaluate --config " + (d / "ok.json").string() + " --out " +
                    (d / "run").string() + " --split dev"),
            2);
  fs::remove_all(d);
}

}  // namespace
}  // namespace retok
