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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "retok/json_util.h"
#include "retok/rng.h"
#include "retok/utf8.h"

namespace retok {
namespace {

ClassifierConfig small_config(int vocab_size, int labels) {
  ClassifierConfig c;
  c.embed_dim = 4;
  c.hidden = 3;
  c.num_labels = labels;
  c.vocab_size = vocab_size;
  return c;
}

// Parameters are read-only outside training, so edited models go through
// save/load.
ClassifierModel with_values(const ClassifierModel& base,
                            const std::function<void(ad::ParamSet&)>& edit) {
  ad::ParamSet ps = base.params();
  edit(ps);
  const auto dir = std::filesystem::path(::testing::TempDir()) / "clf_edit";
  std::filesystem::create_directories(dir);
  save_classifier(base, {}, dir / "m");
  ad::save_weights(ps, (dir / "m.weights.json").string(),
                   (dir / "m.weights.bin").string());
  return load_classifier(dir / "m");
}

TEST(ClassifierTest, ZeroModelIsUniform) {
  ClassifierModel base(small_config(10, 3), 1);
  ClassifierModel zero = with_values(base, [](ad::ParamSet& ps) {
    for (size_t i = 0; i < ps.size(); ++i) ps[i].value.setZero();
  });
  const std::vector<int> ids = {1, 2, 3};
  const auto p = predict(zero, ids);
  ASSERT_EQ(p.size(), 3u);
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(classify_loss(zero, ids, 2), std::log(3.0), 1e-14);
}

TEST(ClassifierTest, SaturatedSoftmax) {
  ClassifierModel base(small_config(10, 2), 1);
  ClassifierModel sat = with_values(base, [](ad::ParamSet& ps) {
    ps[ps.find("output.0.w")].value.setZero();
    ps[ps.find("output.0.b")].value << 10.0, -10.0;
  });
  const std::vector<int> ids = {4};
  EXPECT_NEAR(classify_loss(sat, ids, 0), 2.06e-9, 1e-10);
}

TEST(ClassifierTest, LossIsNegLogPredictAndDeterministic) {
  for (int seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    auto config = small_config(12, 2 + seed % 3);
    config.pooling = seed % 2 ? Pooling::kMean : Pooling::kFinal;
    ClassifierModel m(config, seed);
    std::vector<int> ids(1 + rng.below(8));
    for (int& id : ids) id = rng.below(12);
    const auto p = predict(m, ids);
    double total = 0;
    for (double v : p) total += v;
    EXPECT_NEAR(total, 1.0, 1e-9);
    for (int y = 0; y < config.num_labels; ++y) {
      const double loss = classify_loss(m, ids, y);
      EXPECT_NEAR(loss, -std::log(p[y]), 1e-12);
      EXPECT_EQ(loss, classify_loss(m, ids, y));
    }
  }
}

TEST(ClassifierTest, EmptyInputIsError) {
  ClassifierModel m(small_config(5, 2), 0);
  std::vector<int> none;
  EXPECT_THROW(classify_loss(m, none, 0), std::invalid_argument);
  EXPECT_THROW(predict(m, none), std::invalid_argument);
}

TEST(ClassifierTest, GradCheck) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto config = small_config(7, 3);
    config.embed_dim = 1 + rng.below(4);
    config.hidden = 1 + rng.below(8);
    config.pooling = seed % 2 ? Pooling::kMean : Pooling::kFinal;
    ClassifierModel m(config, seed);
    ad::ParamSet ps = m.params();
    std::vector<int> ids(1 + rng.below(6));
    for (int& id : ids) id = rng.below(7);
    const int label = rng.below(3);
    auto f = [&](ad::Tape& t) {
      // Parameter handles are indices, so the model's graph binds to |ps|.
      nn::Binder bind(t, ps);
      return ad::neg(ad::pick(m.log_probs(bind, ids), 0, label));
    };
    const auto r = ad::grad_check(f, ps);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed << " " << r.worst_param;
  }
}

// Toy task: label 1 iff the token "xx" occurs.
struct Toy {
  Dataset data;
  Tokenizer tok;
};

Toy make_toy(uint64_t seed) {
  Toy toy;
  std::vector<std::string> pieces = {"xx", "a", "b", "c", "x", " "};
  std::vector<double> lp(pieces.size(), std::log(1.0 / pieces.size()));
  toy.tok = Tokenizer(UnigramModel(pieces, lp));
  Rng rng(seed);
  auto gen = [&](std::vector<LabeledExample>& out, int n, int64_t id0) {
    for (int i = 0; i < n; ++i) {
      const int label = i % 2;
      std::string s;
      const int words = 2 + rng.below(4);
      const int where = rng.below(words);
      for (int w = 0; w < words; ++w) {
        if (w) s += " ";
        if (label && w == where) {
          s += "xx";
        } else {
          const int len = 1 + rng.below(3);
          for (int k = 0; k < len; ++k) s += static_cast<char>('a' + rng.below(3));
        }
      }
      out.push_back({s, label, id0 + i});
    }
  };
  gen(toy.data.train, 80, 0);
  gen(toy.data.valid, 40, 1000);
  toy.data.num_labels = 2;
  return toy;
}

TEST(ClassifierTrainTest, LearnsSeparableToy) {
  Toy toy = make_toy(3);
  ClassifierConfig c;
  c.embed_dim = 8;
  c.hidden = 8;
  c.lr = 0.01;
  c.batch_size = 8;
  const auto r = train_classifier(c, toy.data, toy.tok, 11);
  ASSERT_EQ(r.log.size(), 20u);
  EXPECT_GT(r.best_valid_f1, 0.95);
  double max_f1 = 0;
  for (const auto& e : r.log) max_f1 = std::max(max_f1, e.valid_f1);
  EXPECT_EQ(r.best_valid_f1, max_f1);
  EXPECT_EQ(r.log[r.best_epoch - 1].valid_f1, max_f1);
  EXPECT_EQ(evaluate_classifier(r.model, toy.tok, toy.data.valid), max_f1);
}

TEST(ClassifierTrainTest, ZeroEpochsAndDeterminism) {
  Toy toy = make_toy(5);
  ClassifierConfig c;
  c.embed_dim = 4;
  c.hidden = 4;
  c.epochs = 0;
  const auto none = train_classifier(c, toy.data, toy.tok, 1);
  EXPECT_TRUE(none.log.empty());
  EXPECT_EQ(none.best_epoch, 0);
  ClassifierModel init(none.model.config(), 1);
  for (size_t i = 0; i < init.params().size(); ++i) {
    EXPECT_EQ(init.params()[i].value, none.model.params()[i].value);
  }

  c.epochs = 3;
  const auto a = train_classifier(c, toy.data, toy.tok, 7);
  const auto b = train_classifier(c, toy.data, toy.tok, 7);
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  for (size_t i = 0; i < a.model.params().size(); ++i) {
    EXPECT_EQ(a.model.params()[i].value, b.model.params()[i].value);
  }
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(ClassifierPersistenceTest, RoundTrip) {
  const auto dir = std::filesystem::path(::testing::TempDir()) / "clf_rt";
  std::filesystem::create_directories(dir);
  ClassifierModel m(small_config(9, 2), 4);
  ClassifierMeta meta{"abc123", 3, 0.75};
  save_classifier(m, meta, dir / "a");
  ClassifierMeta back;
  ClassifierModel loaded = load_classifier(dir / "a", &back);
  EXPECT_EQ(back.tokenizer_sha256, "abc123");
  EXPECT_EQ(back.best_epoch, 3);
  EXPECT_EQ(back.valid_f1, 0.75);
  const std::vector<int> ids = {1, 5, 8};
  EXPECT_EQ(classify_loss(m, ids, 1), classify_loss(loaded, ids, 1));
  save_classifier(loaded, back, dir / "b");
  for (const char* ext : {".json", ".weights.json", ".weights.bin"}) {
    EXPECT_EQ(slurp(dir / (std::string("a") + ext)),
              slurp(dir / (std::string("b") + ext)))
        << ext;
  }
  EXPECT_THROW(load_classifier(dir / "missing"), std::runtime_error);
}

TEST(ClassifierConfigTest, StrictJson) {
  ClassifierConfig c;
  c.hidden = 7;
  c.pooling = Pooling::kMean;
  const auto back = classifier_config_from_json(to_json(c));
  EXPECT_EQ(back.hidden, 7);
  EXPECT_EQ(back.pooling, Pooling::kMean);
  EXPECT_THROW(classifier_config_from_json({{"hiden", 3}}), ConfigError);
  EXPECT_THROW(classifier_config_from_json({{"hidden", "big"}}), ConfigError);
  EXPECT_THROW(classifier_config_from_json({{"hidden", 0}}), ConfigError);
  EXPECT_THROW(classifier_config_from_json({{"pooling", "max"}}), ConfigError);
  try {
    classifier_config_from_json({{"bogus", 1}}, "classifier");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("classifier.bogus"), std::string::npos);
  }
}

}  // namespace
}  // namespace retok
