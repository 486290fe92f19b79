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

// Command-line driver for the retokenization pipeline.
//
//   retok gen-synth --out data [--config synth.json] [--seed 0]
//   retok train-tokenizer --config exp.json --out runs/exp
//   retok train-downstream --config exp.json --out runs/exp [--seed S]
//   retok collect ...        retok train-opt ...
//   retok evaluate --config exp.json --out runs/exp --split test --format table
//   retok sweep-n ...        retok run ...   (every stage in order)
//
// Exit codes: 0 success, 1 runtime failure, 2 config error, 3 missing or
// stale upstream artifact.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "retok/json_util.h"
#include "retok/pipeline.h"

namespace {

using retok::ConfigError;
using retok::ExperimentConfig;
using retok::StageOptions;

struct Flags {
  std::string config;
  std::string out;
  std::optional<int64_t> seed;
  std::optional<int> threads;
  std::string split = "test";
  std::string format = "table";
  bool force = false;
  bool quiet = false;
};

ExperimentConfig load_config(const Flags& f) {
  ExperimentConfig c = retok::load_experiment_config(f.config);
  if (f.threads) {
    if (*f.threads < 1) throw ConfigError("--threads: must be positive");
    c.threads = *f.threads;
  }
  return c;
}

std::vector<uint64_t> seeds_of(const Flags& f, const ExperimentConfig& c) {
  if (!f.seed) return c.seeds;
  if (*f.seed < 0) throw ConfigError("--seed: must be non-negative");
  return {static_cast<uint64_t>(*f.seed)};
}

StageOptions stage_options(const Flags& f, const ExperimentConfig& c) {
  StageOptions o;
  o.out = f.out;
  o.threads = c.threads;
  o.force = f.force;
  o.quiet = f.quiet;
  return o;
}

void print_report(const retok::EvalReport& r, const std::string& format) {
  std::cout << (format == "json" ? r.to_json() : r.to_table());
}

int gen_synth(const Flags& f) {
  retok::SynthSpec spec;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw ConfigError(f.config + ": no such config file");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(f.config + ": " + e.what());
    }
    spec = retok::synth_spec_from_json(j);
  }
  if (f.seed && *f.seed < 0) throw ConfigError("--seed: must be non-negative");
  const auto corpus = retok::generate_synth(spec, f.seed.value_or(0));
  retok::write_synth(corpus, f.out);
  if (!f.quiet) {
    std::fprintf(stderr, "[retok] wrote %zu/%zu/%zu sentences to %s\n",
                 corpus.data.train.size(), corpus.data.valid.size(),
                 corpus.data.test.size(), f.out.c_str());
  }
  return 0;
}

int run_command(const std::string& cmd, const Flags& f) {
  if (cmd == "gen-synth") return gen_synth(f);
  const ExperimentConfig c = load_config(f);
  const auto seeds = seeds_of(f, c);
  const StageOptions o = stage_options(f, c);
  const bool all = cmd == "run";
  if (cmd == "train-tokenizer" || all) {
    // Seed-independent.
    run_train_tokenizer(c, o);
  }
  if (cmd == "train-downstream" || all) {
    for (uint64_t s : seeds) retok::run_train_downstream(c, s, o);
  }
  if (cmd == "collect" || all) {
    for (uint64_t s : seeds) retok::run_collect(c, s, o);
  }
  if (cmd == "train-opt" || all) {
    for (uint64_t s : seeds) retok::run_train_opt(c, s, o);
  }
  if (cmd == "evaluate" || all) {
    print_report(retok::run_evaluate_all(c, seeds, f.split, o), f.format);
  }
  if (cmd == "sweep-n") {
    print_report(retok::run_sweep_all(c, seeds, f.split, o), f.format);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Downstream-loss retokenization pipeline"};
  app.require_subcommand(1);
  Flags f;

  struct Verb {
    const char* name;
    const char* help;
  };
  const std::vector<Verb> verbs = {
      {"gen-synth", "Write the planted-ambiguity synthetic corpus"},
      {"train-tokenizer", "Train the original tokenizer on the train split"},
      {"train-downstream", "Train the downstream classifier per seed"},
      {"collect", "Build the minimum-loss tokenization dataset per seed"},
      {"train-opt", "Train the optimized tokenizers on the collected data"},
      {"evaluate", "Compare Original, optimized tokenizers and Oracle"},
      {"sweep-n", "Oracle macro-F1 for each candidate count N"},
      {"run", "Every stage from train-tokenizer through evaluate"},
  };
  const std::vector<std::string> splits = {"train", "valid", "test"};
  const std::vector<std::string> formats = {"json", "table"};
  for (const auto& v : verbs) {
    CLI::App* sub = app.add_subcommand(v.name, v.help);
    const bool synth = std::string(v.name) == "gen-synth";
    auto* cfg = sub->add_option("--config", f.config,
                                synth ? "Synthetic corpus spec (JSON)"
                                      : "Experiment config (JSON)");
    if (!synth) cfg->required();
    sub->add_option("--out", f.out,
                    synth ? "Dataset directory" : "Run directory")
        ->required();
    sub->add_option("--seed", f.seed,
                    synth ? "Generator seed" : "Run one seed instead of the config's list");
    sub->add_flag("--quiet", f.quiet, "No progress messages");
    if (synth) continue;
    sub->add_option("--threads", f.threads, "Worker threads");
    sub->add_flag("--force", f.force, "Accept stale upstream artifacts");
    if (std::string(v.name) == "evaluate" || std::string(v.name) == "sweep-n" ||
        std::string(v.name) == "run") {
      sub->add_option("--split", f.split, "Evaluation split")
          ->check(CLI::IsMember(splits));
      sub->add_option("--format", f.format, "Report format")
          ->check(CLI::IsMember(formats));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run_command(cmd, f);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const retok::MissingArtifact& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
