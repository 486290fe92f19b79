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

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace retok::ad {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_error(const char* op, const Matrix& a,
                              const Matrix& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape(a) + " and " + shape(b));
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw std::invalid_argument("Var is not on a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("Vars on different tapes");
  return tape_of(a);
}

bool any_grad(Tape& t, std::initializer_list<Var> vars) {
  for (Var v : vars) {
    if (t.requires_grad(v.id)) return true;
  }
  return false;
}

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Elementwise unary op with derivative expressed through input and output.
template <typename F, typename D>
Var unary(Var a, const char* op, F f, D dfdx) {
  Tape& t = tape_of(a);
  Matrix y = t.value(a.id).unaryExpr(f);
  const int ia = a.id;
  return t.push(
      std::move(y), t.requires_grad(ia),
      [ia, dfdx](Tape& t, int self) {
        const Matrix& x = t.value(ia);
        const Matrix& y = t.value(self);
        const Matrix& g = t.grad(self);
        Matrix& ga = t.grad_ref(ia);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
          ga.data()[i] += g.data()[i] * dfdx(x.data()[i], y.data()[i]);
        }
      },
      op);
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamSet

size_t ParamSet::add(std::string name, Matrix init) {
  if (index_.count(name)) {
    throw std::invalid_argument("duplicate parameter: " + name);
  }
  Parameter p;
  p.name = name;
  p.grad = Matrix::Zero(init.rows(), init.cols());
  p.m = Matrix::Zero(init.rows(), init.cols());
  p.v = Matrix::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  params_.push_back(std::move(p));
  index_[std::move(name)] = params_.size() - 1;
  return params_.size() - 1;
}

int ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : static_cast<int>(it->second);
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

double ParamSet::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) s += p.grad.squaredNorm();
  return std::sqrt(s);
}

double ParamSet::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& p : params_) p.grad *= f;
  }
  return norm;
}

void ParamSet::copy_values_from(const ParamSet& other) {
  if (other.params_.size() != params_.size()) {
    throw std::invalid_argument("copy_values_from: layout mismatch");
  }
  for (size_t i = 0; i < params_.size(); ++i) {
    const Parameter& src = other.params_[i];
    Parameter& dst = params_[i];
    if (src.name != dst.name || src.value.rows() != dst.value.rows() ||
        src.value.cols() != dst.value.cols()) {
      throw std::invalid_argument("copy_values_from: layout mismatch at " +
                                  dst.name);
    }
    dst.value = src.value;
  }
}

int64_t ParamSet::num_values() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Tape

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) {
    throw std::invalid_argument("scalar(): node is " + shape(v));
  }
  return v(0, 0);
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_.at(id);
  return n.ref ? *n.ref : n.value;
}

Var Tape::push(Matrix value, bool requires_grad, Backward backward,
               const char* op) {
  if (check_finite_ && !value.allFinite()) {
    throw std::runtime_error(std::string(op) + ": non-finite value");
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) {
  return push(std::move(value), false, nullptr, "constant");
}

Var Tape::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.ref = &p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_[&p] = id;
  return Var{this, id};
}

Var Tape::fixed(const Parameter& p) {
  Node n;
  n.ref = &p.value;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& v = value(id);
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("backward: foreign Var");
  const Matrix& v = value(root.id);
  if (v.size() != 1) {
    throw std::invalid_argument("backward: root must be 1x1, got " + shape(v));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root.id].requires_grad) return;
  grad_ref(root.id)(0, 0) = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) n.param->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// Core ops

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& A = t.value(a.id);
  const Matrix& B = t.value(b.id);
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  Matrix c = A * B;
  const int ia = a.id, ib = b.id;
  return t.push(
      std::move(c), any_grad(t, {a, b}),
      [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ia)) {
          t.grad_ref(ia).noalias() += g * t.value(ib).transpose();
        }
        if (t.requires_grad(ib)) {
          t.grad_ref(ib).noalias() += t.value(ia).transpose() * g;
        }
      },
      "matmul");
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& A = t.value(a.id);
  const Matrix& B = t.value(b.id);
  const int ia = a.id, ib = b.id;
  if (A.rows() == B.rows() && A.cols() == B.cols()) {
    return t.push(
        A + B, any_grad(t, {a, b}),
        [ia, ib](Tape& t, int self) {
          const Matrix& g = t.grad(self);
          if (t.requires_grad(ia)) t.grad_ref(ia) += g;
          if (t.requires_grad(ib)) t.grad_ref(ib) += g;
        },
        "add");
  }
  if (B.rows() != 1 || B.cols() != A.cols()) shape_error("add", A, B);
  Matrix c = A.rowwise() + B.row(0);
  return t.push(
      std::move(c), any_grad(t, {a, b}),
      [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ia)) t.grad_ref(ia) += g;
        if (t.requires_grad(ib)) t.grad_ref(ib) += g.colwise().sum();
      },
      "add");
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& A = t.value(a.id);
  const Matrix& B = t.value(b.id);
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("sub", A, B);
  const int ia = a.id, ib = b.id;
  return t.push(
      A - B, any_grad(t, {a, b}),
      [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ia)) t.grad_ref(ia) += g;
        if (t.requires_grad(ib)) t.grad_ref(ib) -= g;
      },
      "sub");
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& A = t.value(a.id);
  const Matrix& B = t.value(b.id);
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("mul", A, B);
  const int ia = a.id, ib = b.id;
  return t.push(
      A.cwiseProduct(B), any_grad(t, {a, b}),
      [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        if (t.requires_grad(ia)) {
          t.grad_ref(ia) += g.cwiseProduct(t.value(ib));
        }
        if (t.requires_grad(ib)) {
          t.grad_ref(ib) += g.cwiseProduct(t.value(ia));
        }
      },
      "mul");
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  return t.push(
      t.value(ia) * s, t.requires_grad(ia),
      [ia, s](Tape& t, int self) { t.grad_ref(ia) += t.grad(self) * s; },
      "scale");
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  return t.push(
      (t.value(ia).array() + s).matrix(), t.requires_grad(ia),
      [ia](Tape& t, int self) { t.grad_ref(ia) += t.grad(self); },
      "add_scalar");
}

Var neg(Var a) { return scale(a, -1.0); }

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var log_sigmoid(Var a) {
  return unary(
      a, "log_sigmoid",
      [](double x) {
        return x >= 0 ? -std::log1p(std::exp(-x))
                      : x - std::log1p(std::exp(x));
      },
      [](double x, double) {
        // 1 - sigmoid(x)
        return x >= 0 ? std::exp(-x) / (1.0 + std::exp(-x))
                      : 1.0 / (1.0 + std::exp(x));
      });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  return t.push(
      t.value(ia).transpose(), t.requires_grad(ia),
      [ia](Tape& t, int self) { t.grad_ref(ia) += t.grad(self).transpose(); },
      "transpose");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index r = t.value(parts[0].id).rows();
  Eigen::Index c = 0;
  bool grad = false;
  for (Var p : parts) {
    tape_of(p, parts[0]);
    const Matrix& v = t.value(p.id);
    if (v.rows() != r) shape_error("concat_cols", t.value(parts[0].id), v);
    c += v.cols();
    grad = grad || t.requires_grad(p.id);
  }
  Matrix out(r, c);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (Var p : parts) {
    const Matrix& v = t.value(p.id);
    out.middleCols(at, v.cols()) = v;
    layout.emplace_back(p.id, at);
    at += v.cols();
  }
  return t.push(
      std::move(out), grad,
      [layout](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        for (auto [id, off] : layout) {
          if (!t.requires_grad(id)) continue;
          Matrix& gi = t.grad_ref(id);
          gi += g.middleCols(off, gi.cols());
        }
      },
      "concat_cols");
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index c = t.value(parts[0].id).cols();
  Eigen::Index r = 0;
  bool grad = false;
  for (Var p : parts) {
    tape_of(p, parts[0]);
    const Matrix& v = t.value(p.id);
    if (v.cols() != c) shape_error("concat_rows", t.value(parts[0].id), v);
    r += v.rows();
    grad = grad || t.requires_grad(p.id);
  }
  Matrix out(r, c);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (Var p : parts) {
    const Matrix& v = t.value(p.id);
    out.middleRows(at, v.rows()) = v;
    layout.emplace_back(p.id, at);
    at += v.rows();
  }
  return t.push(
      std::move(out), grad,
      [layout](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        for (auto [id, off] : layout) {
          if (!t.requires_grad(id)) continue;
          Matrix& gi = t.grad_ref(id);
          gi += g.middleRows(off, gi.rows());
        }
      },
      "concat_rows");
}

Var rows(Var a, const std::vector<int>& ids) {
  Tape& t = tape_of(a);
  const Matrix& A = t.value(a.id);
  Matrix out(static_cast<Eigen::Index>(ids.size()), A.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= A.rows()) {
      throw std::out_of_range("rows: index " + std::to_string(ids[i]) +
                              " outside " + shape(A));
    }
    out.row(static_cast<Eigen::Index>(i)) = A.row(ids[i]);
  }
  const int ia = a.id;
  return t.push(
      std::move(out), t.requires_grad(ia),
      [ia, ids](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        Matrix& ga = t.grad_ref(ia);
        for (size_t i = 0; i < ids.size(); ++i) {
          ga.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
        }
      },
      "rows");
}

Var slice_rows(Var a, int start, int count) {
  Tape& t = tape_of(a);
  const Matrix& A = t.value(a.id);
  if (start < 0 || count < 0 || start + count > A.rows()) {
    throw std::out_of_range("slice_rows: [" + std::to_string(start) + ", " +
                            std::to_string(start + count) + ") outside " +
                            shape(A));
  }
  const int ia = a.id;
  return t.push(
      A.middleRows(start, count), t.requires_grad(ia),
      [ia, start, count](Tape& t, int self) {
        t.grad_ref(ia).middleRows(start, count) += t.grad(self);
      },
      "slice_rows");
}

Var slice_cols(Var a, int start, int count) {
  Tape& t = tape_of(a);
  const Matrix& A = t.value(a.id);
  if (start < 0 || count < 0 || start + count > A.cols()) {
    throw std::out_of_range("slice_cols: [" + std::to_string(start) + ", " +
                            std::to_string(start + count) + ") outside " +
                            shape(A));
  }
  const int ia = a.id;
  return t.push(
      A.middleCols(start, count), t.requires_grad(ia),
      [ia, start, count](Tape& t, int self) {
        t.grad_ref(ia).middleCols(start, count) += t.grad(self);
      },
      "slice_cols");
}

Var log_softmax(Var a) {
  Tape& t = tape_of(a);
  const Matrix& A = t.value(a.id);
  Matrix out(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const double m = A.row(r).maxCoeff();
    const double lse = m + std::log((A.row(r).array() - m).exp().sum());
    out.row(r) = A.row(r).array() - lse;
  }
  const int ia = a.id;
  return t.push(
      std::move(out), t.requires_grad(ia),
      [ia](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        const Matrix& y = t.value(self);
        Matrix& ga = t.grad_ref(ia);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const double s = g.row(r).sum();
          ga.row(r).array() +=
              g.row(r).array() - y.row(r).array().exp() * s;
        }
      },
      "log_softmax");
}

Var pick(Var a, int row, int col) {
  return gather_cells(a, {{row, col}});
}

Var gather_cells(Var a, const std::vector<std::pair<int, int>>& cells) {
  Tape& t = tape_of(a);
  const Matrix& A = t.value(a.id);
  Matrix out(static_cast<Eigen::Index>(cells.size()), 1);
  for (size_t i = 0; i < cells.size(); ++i) {
    auto [r, c] = cells[i];
    if (r < 0 || r >= A.rows() || c < 0 || c >= A.cols()) {
      throw std::out_of_range("gather_cells: (" + std::to_string(r) + ", " +
                              std::to_string(c) + ") outside " + shape(A));
    }
    out(static_cast<Eigen::Index>(i), 0) = A(r, c);
  }
  const int ia = a.id;
  return t.push(
      std::move(out), t.requires_grad(ia),
      [ia, cells](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        Matrix& ga = t.grad_ref(ia);
        for (size_t i = 0; i < cells.size(); ++i) {
          ga(cells[i].first, cells[i].second) +=
              g(static_cast<Eigen::Index>(i), 0);
        }
      },
      "gather_cells");
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = t.value(a.id).sum();
  const int ia = a.id;
  return t.push(
      std::move(out), t.requires_grad(ia),
      [ia](Tape& t, int self) {
        t.grad_ref(ia).array() += t.grad(self)(0, 0);
      },
      "sum");
}

Var mean(Var a) {
  const Eigen::Index n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Fused LSTM

namespace {

struct LstmCache {
  Matrix gates;  // T x 4H activated gates (i, f, g, o)
  Matrix cells;  // T x H
  Matrix tanh_cells;
};

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var lstm(Var inputs, Var wx, Var wh, Var b, bool reverse) {
  Tape& t = tape_of(inputs, wx);
  tape_of(wh, b);
  tape_of(inputs, b);
  const Matrix& X = t.value(inputs.id);
  const Matrix& Wx = t.value(wx.id);
  const Matrix& Wh = t.value(wh.id);
  const Matrix& B = t.value(b.id);
  const Eigen::Index H = Wh.rows();
  if (Wh.cols() != 4 * H) shape_error("lstm(wh)", Wh, Wh);
  if (Wx.cols() != 4 * H) shape_error("lstm(wx)", Wx, Wh);
  if (B.rows() != 1 || B.cols() != 4 * H) shape_error("lstm(b)", B, Wh);
  if (X.cols() != Wx.rows()) shape_error("lstm(inputs)", X, Wx);

  const Eigen::Index T = X.rows();
  auto cache = std::make_shared<LstmCache>();
  cache->gates.resize(T, 4 * H);
  cache->cells.resize(T, H);
  cache->tanh_cells.resize(T, H);
  Matrix Hout(T, H);
  Matrix pre = X * Wx;
  pre.rowwise() += B.row(0);
  Matrix h = Matrix::Zero(1, H);
  Matrix c = Matrix::Zero(1, H);
  Matrix z(1, 4 * H);
  for (Eigen::Index s = 0; s < T; ++s) {
    const Eigen::Index tt = reverse ? T - 1 - s : s;
    z.noalias() = pre.row(tt) + h * Wh;
    auto gates = cache->gates.row(tt);
    for (Eigen::Index k = 0; k < H; ++k) {
      const double ig = sigm(z(0, k));
      const double fg = sigm(z(0, H + k));
      const double gg = std::tanh(z(0, 2 * H + k));
      const double og = sigm(z(0, 3 * H + k));
      gates(k) = ig;
      gates(H + k) = fg;
      gates(2 * H + k) = gg;
      gates(3 * H + k) = og;
      c(0, k) = fg * c(0, k) + ig * gg;
      const double tc = std::tanh(c(0, k));
      cache->cells(tt, k) = c(0, k);
      cache->tanh_cells(tt, k) = tc;
      h(0, k) = og * tc;
    }
    Hout.row(tt) = h;
  }

  const int ix = inputs.id, iwx = wx.id, iwh = wh.id, ib = b.id;
  return t.push(
      std::move(Hout), any_grad(t, {inputs, wx, wh, b}),
      [ix, iwx, iwh, ib, reverse, cache](Tape& t, int self) {
        const Matrix& G = t.grad(self);
        const Matrix& Hv = t.value(self);
        const Matrix& X = t.value(ix);
        const Matrix& Wx = t.value(iwx);
        const Matrix& Wh = t.value(iwh);
        const Eigen::Index T = G.rows();
        const Eigen::Index H = G.cols();
        Matrix dpre(T, 4 * H);
        Matrix dh_next = Matrix::Zero(1, H);
        Matrix dc_next = Matrix::Zero(1, H);
        Matrix dWh = Matrix::Zero(H, 4 * H);
        Matrix dz(1, 4 * H);
        for (Eigen::Index s = T - 1; s >= 0; --s) {
          const Eigen::Index tt = reverse ? T - 1 - s : s;
          const bool first = s == 0;
          const Eigen::Index prev = reverse ? tt + 1 : tt - 1;
          auto gates = cache->gates.row(tt);
          for (Eigen::Index k = 0; k < H; ++k) {
            const double ig = gates(k), fg = gates(H + k);
            const double gg = gates(2 * H + k), og = gates(3 * H + k);
            const double tc = cache->tanh_cells(tt, k);
            const double c_prev = first ? 0.0 : cache->cells(prev, k);
            const double dh = G(tt, k) + dh_next(0, k);
            const double dc = dc_next(0, k) + dh * og * (1.0 - tc * tc);
            dz(0, k) = dc * gg * ig * (1.0 - ig);
            dz(0, H + k) = dc * c_prev * fg * (1.0 - fg);
            dz(0, 2 * H + k) = dc * ig * (1.0 - gg * gg);
            dz(0, 3 * H + k) = dh * tc * og * (1.0 - og);
            dc_next(0, k) = dc * fg;
          }
          if (!first) dWh.noalias() += Hv.row(prev).transpose() * dz;
          dh_next.noalias() = dz * Wh.transpose();
          dpre.row(tt) = dz;
        }
        if (t.requires_grad(iwh)) t.grad_ref(iwh) += dWh;
        if (t.requires_grad(iwx)) {
          t.grad_ref(iwx).noalias() += X.transpose() * dpre;
        }
        if (t.requires_grad(ib)) t.grad_ref(ib) += dpre.colwise().sum();
        if (t.requires_grad(ix)) {
          t.grad_ref(ix).noalias() += dpre * Wx.transpose();
        }
      },
      "lstm");
}

// ---------------------------------------------------------------------------
// CRF

namespace {

void check_crf_shapes(const char* op, const Matrix& E, const Matrix& A) {
  if (A.rows() != A.cols() || A.rows() != E.cols() || E.cols() < 1) {
    shape_error(op, E, A);
  }
}

// Forward log-potentials; paths are forced to start in tag 0.
Matrix crf_alpha(const Matrix& E, const Matrix& A) {
  const Eigen::Index T = E.rows(), K = E.cols();
  Matrix alpha = Matrix::Constant(T, K, kNegInf);
  if (T == 0) return alpha;
  alpha(0, 0) = E(0, 0);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (Eigen::Index k = 0; k < K; ++k) {
      double acc = kNegInf;
      for (Eigen::Index j = 0; j < K; ++j) {
        acc = log_sum_exp(acc, alpha(t - 1, j) + A(j, k));
      }
      alpha(t, k) = acc + E(t, k);
    }
  }
  return alpha;
}

Matrix crf_beta(const Matrix& E, const Matrix& A) {
  const Eigen::Index T = E.rows(), K = E.cols();
  Matrix beta = Matrix::Zero(T, K);
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    for (Eigen::Index j = 0; j < K; ++j) {
      double acc = kNegInf;
      for (Eigen::Index k = 0; k < K; ++k) {
        acc = log_sum_exp(acc, A(j, k) + E(t + 1, k) + beta(t + 1, k));
      }
      beta(t, j) = acc;
    }
  }
  return beta;
}

double row_lse(const Matrix& m, Eigen::Index r) {
  double acc = kNegInf;
  for (Eigen::Index k = 0; k < m.cols(); ++k) acc = log_sum_exp(acc, m(r, k));
  return acc;
}

}  // namespace

double crf_log_partition(const Matrix& E, const Matrix& A) {
  check_crf_shapes("crf_log_partition", E, A);
  if (E.rows() == 0) return 0.0;
  return row_lse(crf_alpha(E, A), E.rows() - 1);
}

Var crf_nll(Var emissions, Var transitions, const std::vector<int>& gold) {
  Tape& t = tape_of(emissions, transitions);
  const Matrix& E = t.value(emissions.id);
  const Matrix& A = t.value(transitions.id);
  check_crf_shapes("crf_nll", E, A);
  const Eigen::Index T = E.rows(), K = E.cols();
  if (static_cast<Eigen::Index>(gold.size()) != T || T == 0) {
    throw std::invalid_argument("crf_nll: " + std::to_string(gold.size()) +
                                " gold tags for emissions " + shape(E));
  }
  if (gold[0] != 0) {
    throw std::invalid_argument("crf_nll: gold path must start in tag 0");
  }
  double gold_score = 0.0;
  for (Eigen::Index i = 0; i < T; ++i) {
    if (gold[i] < 0 || gold[i] >= K) {
      throw std::out_of_range("crf_nll: tag out of range");
    }
    gold_score += E(i, gold[i]);
    if (i > 0) gold_score += A(gold[i - 1], gold[i]);
  }
  const double log_z = crf_log_partition(E, A);
  Matrix out(1, 1);
  out(0, 0) = log_z - gold_score;
  const int ie = emissions.id, ia = transitions.id;
  return t.push(
      std::move(out), any_grad(t, {emissions, transitions}),
      [ie, ia, gold, log_z](Tape& t, int self) {
        const double g = t.grad(self)(0, 0);
        const Matrix& E = t.value(ie);
        const Matrix& A = t.value(ia);
        const Eigen::Index T = E.rows(), K = E.cols();
        const Matrix alpha = crf_alpha(E, A);
        const Matrix beta = crf_beta(E, A);
        if (t.requires_grad(ie)) {
          Matrix& gE = t.grad_ref(ie);
          for (Eigen::Index i = 0; i < T; ++i) {
            for (Eigen::Index k = 0; k < K; ++k) {
              gE(i, k) += g * std::exp(alpha(i, k) + beta(i, k) - log_z);
            }
            gE(i, gold[i]) -= g;
          }
        }
        if (t.requires_grad(ia)) {
          Matrix& gA = t.grad_ref(ia);
          for (Eigen::Index i = 1; i < T; ++i) {
            for (Eigen::Index j = 0; j < K; ++j) {
              for (Eigen::Index k = 0; k < K; ++k) {
                gA(j, k) += g * std::exp(alpha(i - 1, j) + A(j, k) +
                                         E(i, k) + beta(i, k) - log_z);
              }
            }
            gA(gold[i - 1], gold[i]) -= g;
          }
        }
      },
      "crf_nll");
}

std::vector<int> crf_decode(const Matrix& E, const Matrix& A) {
  check_crf_shapes("crf_decode", E, A);
  const Eigen::Index T = E.rows(), K = E.cols();
  if (T == 0) return {};
  Matrix score = Matrix::Constant(T, K, kNegInf);
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> back(T, K);
  score(0, 0) = E(0, 0);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (Eigen::Index k = 0; k < K; ++k) {
      int best = 0;
      double best_score = kNegInf;
      for (Eigen::Index j = 0; j < K; ++j) {
        const double s = score(t - 1, j) + A(j, k);
        if (s > best_score) {
          best_score = s;
          best = static_cast<int>(j);
        }
      }
      score(t, k) = best_score + E(t, k);
      back(t, k) = best;
    }
  }
  std::vector<int> tags(T);
  Eigen::Index k = 0;
  for (Eigen::Index j = 1; j < K; ++j) {
    if (score(T - 1, j) > score(T - 1, k)) k = j;
  }
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    tags[t] = static_cast<int>(k);
    if (t > 0) k = back(t, k);
  }
  return tags;
}

// ---------------------------------------------------------------------------
// Optimization

void adam_step(ParamSet& params, const AdamConfig& config) {
  params.set_step(params.step() + 1);
  const double t = static_cast<double>(params.step());
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    p.m = config.beta1 * p.m + (1.0 - config.beta1) * p.grad;
    p.v = config.beta2 * p.v +
          (1.0 - config.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= config.lr * (p.m.array() / c1) /
                       ((p.v.array() / c2).sqrt() + config.eps);
    p.grad.setZero();
  }
}

GradCheckResult grad_check(const std::function<Var(Tape&)>& f,
                           ParamSet& params, double epsilon) {
  params.zero_grad();
  {
    Tape tape(true);
    tape.backward(f(tape));
  }
  std::vector<Matrix> analytic;
  for (size_t i = 0; i < params.size(); ++i) {
    analytic.push_back(params[i].grad);
  }
  auto eval = [&] {
    Tape tape(true);
    return f(tape).scalar();
  };
  GradCheckResult result;
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const double orig = p.value.data()[k];
      auto at = [&](double delta) {
        p.value.data()[k] = orig + delta;
        return eval();
      };
      const double d1 = at(epsilon) - at(-epsilon);
      const double d2 = at(2 * epsilon) - at(-2 * epsilon);
      const double numeric = (8.0 * d1 - d2) / (12.0 * epsilon);
      p.value.data()[k] = orig;
      const double a = analytic[i].data()[k];
      const double rel = std::abs(a - numeric) /
                         std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.checked;
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = std::isfinite(rel)
                                   ? rel
                                   : std::numeric_limits<double>::infinity();
        result.worst_param = p.name;
      }
    }
  }
  params.zero_grad();
  return result;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

void write_le_f64(std::ostream& out, double v) {
  uint64_t bits = std::bit_cast<uint64_t>(v);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

double read_le_f64(const unsigned char* buf) {
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_weights(const ParamSet& params,
                  const std::filesystem::path& manifest_path,
                  const std::filesystem::path& blob_path) {
  nlohmann::ordered_json manifest;
  manifest["dtype"] = "float64";
  manifest["endianness"] = "little";
  manifest["format_version"] = kWeightFormatVersion;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("cannot write " + blob_path.string());
  int64_t offset = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    entries.push_back({{"name", p.name},
                       {"shape", {p.value.rows(), p.value.cols()}},
                       {"offset", offset},
                       {"count", p.value.size()}});
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      write_le_f64(blob, p.value.data()[k]);
    }
    offset += p.value.size();
  }
  manifest["params"] = std::move(entries);
  manifest["total_values"] = offset;
  blob.close();
  if (!blob) throw std::runtime_error("write failed: " + blob_path.string());
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + manifest_path.string());
  out << manifest.dump(1) << "\n";
  if (!out) throw std::runtime_error("write failed: " + manifest_path.string());
}

void load_weights(ParamSet& params, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& blob_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot read " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  std::ifstream blob_in(blob_path, std::ios::binary);
  if (!blob_in) throw std::runtime_error("cannot read " + blob_path.string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(blob_in)),
                                  std::istreambuf_iterator<char>());
  try {
    if (manifest.at("format_version").get<int>() != kWeightFormatVersion) {
      throw std::runtime_error("unsupported weight format version");
    }
    if (manifest.at("dtype").get<std::string>() != "float64") {
      throw std::runtime_error("unsupported dtype");
    }
    const auto& entries = manifest.at("params");
    if (entries.size() != params.size()) {
      throw std::runtime_error("manifest has " +
                               std::to_string(entries.size()) +
                               " params, model has " +
                               std::to_string(params.size()));
    }
    const int64_t total = manifest.at("total_values").get<int64_t>();
    if (static_cast<int64_t>(blob.size()) != total * 8) {
      throw std::runtime_error("blob size " + std::to_string(blob.size()) +
                               " does not match manifest");
    }
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& e = entries[i];
      Parameter& p = params[i];
      const auto name = e.at("name").get<std::string>();
      const auto r = e.at("shape").at(0).get<int64_t>();
      const auto c = e.at("shape").at(1).get<int64_t>();
      const auto offset = e.at("offset").get<int64_t>();
      if (name != p.name || r != p.value.rows() || c != p.value.cols()) {
        throw std::runtime_error("parameter mismatch at " + p.name + ": file has " +
                                 name + " " + std::to_string(r) + "x" +
                                 std::to_string(c));
      }
      if (offset < 0 || offset + r * c > total) {
        throw std::runtime_error("bad offset for " + name);
      }
      for (int64_t k = 0; k < r * c; ++k) {
        p.value.data()[k] = read_le_f64(&blob[(offset + k) * 8]);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
}

}  // namespace retok::ad
