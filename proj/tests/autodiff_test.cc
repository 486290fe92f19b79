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

#include "retok/autodiff.h"

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "op_cases.h"
#include "retok/nn.h"
#include "retok/rng.h"

namespace retok::ad {
namespace {

using testing_ops::op_cases;
using testing_ops::random_matrix;
using testing_ops::weighted_sum;

constexpr double kOpTolerance = 1e-6;
constexpr int kSeeds = 100;

TEST(AutodiffTest, EveryOpPassesGradCheck) {
  for (const auto& c : op_cases()) {
    double worst = 0.0;
    for (int seed = 0; seed < kSeeds; ++seed) {
      Rng rng = Rng::stream(seed, c.name);
      ParamSet ps;
      auto f = c.make(ps, rng);
      const GradCheckResult r = grad_check(f, ps);
      EXPECT_GT(r.checked, 0);
      worst = std::max(worst, r.max_rel_error);
      ASSERT_LT(r.max_rel_error, kOpTolerance)
          << c.name << " seed " << seed << " param " << r.worst_param;
    }
    RecordProperty(c.name, std::to_string(worst));
  }
}

TEST(AutodiffTest, ReusedNodeAccumulatesGradient) {
  ParamSet ps;
  Matrix x(1, 3);
  x << 1.0, -2.0, 3.0;
  const size_t i = ps.add("x", x);
  Tape t;
  Var v = t.param(ps[i]);
  t.backward(sum(mul(v, v)));
  EXPECT_DOUBLE_EQ(ps[i].grad(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(ps[i].grad(0, 1), -4.0);
  EXPECT_DOUBLE_EQ(ps[i].grad(0, 2), 6.0);
}

TEST(AutodiffTest, ShapeErrorNamesOpAndShapes) {
  Tape t;
  Var a = t.constant(Matrix::Zero(2, 3));
  Var b = t.constant(Matrix::Zero(2, 3));
  try {
    matmul(a, b);
    FAIL() << "expected throw";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(a, t.constant(Matrix::Zero(1, 2))), std::invalid_argument);
  EXPECT_THROW(t.backward(a), std::invalid_argument);
}

TEST(AutodiffTest, FiniteCheckCatchesNan) {
  Tape t(true);
  Var a = t.constant(Matrix::Constant(1, 1, -1.0));
  EXPECT_THROW(log(a), std::runtime_error);
  Tape quiet(false);
  Var b = quiet.constant(Matrix::Constant(1, 1, -1.0));
  EXPECT_TRUE(std::isnan(log(b).scalar()));
}

TEST(AutodiffTest, FixedLeafGetsNoGradient) {
  ParamSet ps;
  const size_t i = ps.add("w", Matrix::Ones(2, 2));
  Tape t;
  Var w = t.fixed(ps[i]);
  Var y = sum(mul(w, t.constant(Matrix::Ones(2, 2))));
  EXPECT_DOUBLE_EQ(y.scalar(), 4.0);
  t.backward(y);
  EXPECT_EQ(ps[i].grad.norm(), 0.0);
}

TEST(LstmTest, HandComputedStep) {
  // in = 1, H = 1, single step: z = x*wx + b.
  Tape t;
  Matrix x(1, 1), wx(1, 4), wh(1, 4), b(1, 4);
  x << 0.5;
  wx << 1.0, 2.0, -1.0, 0.5;
  wh << 0.3, 0.3, 0.3, 0.3;
  b << 0.0, 1.0, 0.0, 0.0;
  Var h = lstm(t.constant(x), t.constant(wx), t.constant(wh), t.constant(b),
               false);
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const double i = sig(0.5), g = std::tanh(-0.5), o = sig(0.25);
  const double c = i * g;
  EXPECT_NEAR(h.value()(0, 0), o * std::tanh(c), 1e-15);

  // Second step feeds h back through wh.
  Matrix x2(2, 1);
  x2 << 0.5, -1.0;
  Var h2 = lstm(t.constant(x2), t.constant(wx), t.constant(wh),
                t.constant(b), false);
  const double h1 = o * std::tanh(c);
  const double z0 = -1.0 + 0.3 * h1, z1 = -2.0 + 1.0 + 0.3 * h1,
               z2 = 1.0 + 0.3 * h1, z3 = -0.5 + 0.3 * h1;
  const double c2 = sig(z1) * c + sig(z0) * std::tanh(z2);
  EXPECT_NEAR(h2.value()(1, 0), sig(z3) * std::tanh(c2), 1e-15);
}

// Reference LSTM assembled from core ops.
Var composed_lstm(Var x, Var wx, Var wh, Var b, bool reverse) {
  const int len = static_cast<int>(x.rows());
  const int h = static_cast<int>(wh.rows());
  Tape& t = *x.tape;
  Var hprev = t.constant(Matrix::Zero(1, h));
  Var cprev = t.constant(Matrix::Zero(1, h));
  std::vector<Var> outs(len);
  for (int s = 0; s < len; ++s) {
    const int pos = reverse ? len - 1 - s : s;
    Var z = add(add(matmul(slice_rows(x, pos, 1), wx), matmul(hprev, wh)), b);
    Var ig = sigmoid(slice_cols(z, 0, h));
    Var fg = sigmoid(slice_cols(z, h, h));
    Var gg = tanh(slice_cols(z, 2 * h, h));
    Var og = sigmoid(slice_cols(z, 3 * h, h));
    cprev = add(mul(fg, cprev), mul(ig, gg));
    hprev = mul(og, tanh(cprev));
    outs[pos] = hprev;
  }
  return concat_rows(outs);
}

TEST(LstmTest, FusedMatchesComposedOps) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng = Rng::stream(seed, "lstm-compose");
    const int in = 3, h = 4, len = 6;
    const bool reverse = seed % 2 == 1;
    ParamSet fused, composed;
    for (ParamSet* ps : {&fused, &composed}) {
      Rng r = rng;
      ps->add("x", random_matrix(len, in, r));
      ps->add("wx", random_matrix(in, 4 * h, r));
      ps->add("wh", random_matrix(h, 4 * h, r));
      ps->add("b", random_matrix(1, 4 * h, r));
    }
    Matrix w = random_matrix(len, h, rng);
    Tape t1, t2;
    Var y1 = lstm(t1.param(fused[0]), t1.param(fused[1]), t1.param(fused[2]),
                  t1.param(fused[3]), reverse);
    Var y2 = composed_lstm(t2.param(composed[0]), t2.param(composed[1]),
                           t2.param(composed[2]), t2.param(composed[3]),
                           reverse);
    EXPECT_LT((y1.value() - y2.value()).cwiseAbs().maxCoeff(), 1e-12);
    t1.backward(weighted_sum(t1, y1, w));
    t2.backward(weighted_sum(t2, y2, w));
    for (size_t i = 0; i < fused.size(); ++i) {
      EXPECT_LT((fused[i].grad - composed[i].grad).cwiseAbs().maxCoeff(),
                1e-12)
          << fused[i].name;
    }
  }
}

TEST(CrfTest, PathProbabilitiesSumToOne) {
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng = Rng::stream(seed, "crf-sum");
    const int len = 1 + seed % 6;
    const Matrix e = random_matrix(len, 2, rng, -2, 2);
    const Matrix a = random_matrix(2, 2, rng, -2, 2);
    double total = 0.0;
    double best = -1.0;
    std::vector<int> best_path;
    // All tag sequences starting with tag 0.
    for (int mask = 0; mask < (1 << (len - 1)); ++mask) {
      std::vector<int> gold(len, 0);
      for (int i = 1; i < len; ++i) gold[i] = (mask >> (i - 1)) & 1;
      Tape t;
      const double p =
          std::exp(-crf_nll(t.constant(e), t.constant(a), gold).scalar());
      total += p;
      if (p > best) {
        best = p;
        best_path = gold;
      }
    }
    EXPECT_NEAR(total, 1.0, 1e-9) << "seed " << seed;
    EXPECT_EQ(crf_decode(e, a), best_path) << "seed " << seed;
  }
}

TEST(CrfTest, RejectsPathNotStartingInFirstTag) {
  Tape t;
  Var e = t.constant(Matrix::Zero(3, 2));
  Var a = t.constant(Matrix::Zero(2, 2));
  EXPECT_THROW(crf_nll(e, a, {1, 0, 0}), std::invalid_argument);
  EXPECT_THROW(crf_nll(e, a, {0, 0}), std::invalid_argument);
  EXPECT_NEAR(crf_nll(e, a, {0, 1, 1}).scalar(), std::log(4.0), 1e-12);
}

TEST(AdamTest, FirstStepMovesByLearningRateTimesSign) {
  ParamSet ps;
  Matrix v(1, 3);
  v << 1.0, 2.0, 3.0;
  const size_t i = ps.add("p", v);
  ps[i].grad << 0.5, -3.0, 0.0;
  AdamConfig config;
  config.lr = 0.01;
  adam_step(ps, config);
  EXPECT_NEAR(ps[i].value(0, 0), 1.0 - 0.01, 1e-8);
  EXPECT_NEAR(ps[i].value(0, 1), 2.0 + 0.01, 1e-8);
  EXPECT_DOUBLE_EQ(ps[i].value(0, 2), 3.0);
  EXPECT_EQ(ps[i].grad.norm(), 0.0);
  EXPECT_EQ(ps.step(), 1);

  // Zero gradients leave parameters unchanged on a fresh optimizer.
  ParamSet fresh;
  fresh.add("p", v);
  adam_step(fresh, config);
  EXPECT_EQ(fresh[0].value, v);
}

TEST(AdamTest, ClipGlobalNorm) {
  ParamSet ps;
  ps.add("a", Matrix::Zero(1, 2));
  ps.add("b", Matrix::Zero(1, 1));
  ps[0].grad << 3.0, 0.0;
  ps[1].grad << 4.0;
  EXPECT_DOUBLE_EQ(ps.clip_grad_norm(2.5), 5.0);
  EXPECT_NEAR(ps.grad_norm(), 2.5, 1e-12);
  EXPECT_NEAR(ps[1].grad(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(ps.clip_grad_norm(10.0), 2.5, 1e-12);
  EXPECT_NEAR(ps.grad_norm(), 2.5, 1e-12);
}

TEST(AdamTest, MinimizesQuadratic) {
  ParamSet ps;
  const size_t i = ps.add("x", Matrix::Constant(1, 2, 3.0));
  AdamConfig config;
  config.lr = 0.05;
  for (int step = 0; step < 2000; ++step) {
    Tape t;
    Var x = t.param(ps[i]);
    t.backward(sum(mul(x, x)));
    adam_step(ps, config);
  }
  EXPECT_LT(ps[i].value.cwiseAbs().maxCoeff(), 1e-3);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(WeightsTest, RoundTripIsExact) {
  const auto dir = std::filesystem::path(::testing::TempDir()) / "weights";
  std::filesystem::create_directories(dir);
  Rng rng(7);
  ParamSet ps;
  ps.add("emb", random_matrix(5, 3, rng));
  ps.add("bias", random_matrix(1, 3, rng));
  save_weights(ps, dir / "w.json", dir / "w.bin");
  EXPECT_EQ(std::filesystem::file_size(dir / "w.bin"), 18u * 8u);

  ParamSet loaded;
  loaded.add("emb", Matrix::Zero(5, 3));
  loaded.add("bias", Matrix::Zero(1, 3));
  load_weights(loaded, dir / "w.json", dir / "w.bin");
  EXPECT_EQ(loaded[0].value, ps[0].value);
  EXPECT_EQ(loaded[1].value, ps[1].value);

  save_weights(loaded, dir / "w2.json", dir / "w2.bin");
  EXPECT_EQ(read_file(dir / "w.json"), read_file(dir / "w2.json"));
  EXPECT_EQ(read_file(dir / "w.bin"), read_file(dir / "w2.bin"));

  ParamSet wrong;
  wrong.add("emb", Matrix::Zero(4, 3));
  wrong.add("bias", Matrix::Zero(1, 3));
  EXPECT_THROW(load_weights(wrong, dir / "w.json", dir / "w.bin"),
               std::runtime_error);

  std::filesystem::resize_file(dir / "w2.bin", 8);
  EXPECT_THROW(load_weights(loaded, dir / "w2.json", dir / "w2.bin"),
               std::runtime_error);
  EXPECT_THROW(load_weights(loaded, dir / "missing.json", dir / "w.bin"),
               std::runtime_error);
}

TEST(NnTest, CompositeModelPassesGradCheck) {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng = Rng::stream(seed, "nn-composite");
    ParamSet ps;
    const size_t emb = ps.add("emb", random_matrix(6, 3, rng));
    auto bi = nn::add_bilstm(ps, "enc", 3, 4, rng);
    auto head = nn::add_mlp(ps, "head", {8, 5, 2}, rng);
    const std::vector<int> ids = {1, 4, 2, 2, 5};
    auto f = [&](Tape& t) {
      nn::Binder bind(t, ps);
      Var x = rows(bind(emb), ids);
      Var h = nn::bilstm(bind, bi, x);
      Var logits = nn::mlp(bind, head, h);
      return neg(sum(pick(log_softmax(slice_rows(logits, 4, 1)), 0, 1)));
    };
    const GradCheckResult r = grad_check(f, ps);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
  }
}

TEST(NnTest, LstmInitHasForgetBiasOne) {
  Rng rng(1);
  ParamSet ps;
  auto p = nn::add_lstm(ps, "l", 2, 3, rng);
  const Matrix& b = ps[p.b].value;
  EXPECT_EQ(b.cols(), 12);
  EXPECT_EQ(b.middleCols(3, 3), Matrix::Ones(1, 3));
  EXPECT_EQ(b.leftCols(3).norm(), 0.0);
  EXPECT_EQ(b.rightCols(6).norm(), 0.0);
  const double limit = std::sqrt(6.0 / (2 + 12));
  EXPECT_LE(ps[p.wx].value.cwiseAbs().maxCoeff(), limit);
}

}  // namespace
}  // namespace retok::ad
