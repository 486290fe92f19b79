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

#ifndef RETOK_AUTODIFF_H_
#define RETOK_AUTODIFF_H_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace retok::ad {

// Dense row-major matrix; row vectors are 1 x n.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  // Adam moments.
  Matrix m;
  Matrix v;
};

// Named parameters in insertion order. Handles are indices, so a ParamSet
// (and anything holding one) can be copied freely.
class ParamSet {
 public:
  size_t add(std::string name, Matrix init);
  size_t size() const { return params_.size(); }
  Parameter& operator[](size_t i) { return params_.at(i); }
  const Parameter& operator[](size_t i) const { return params_.at(i); }
  // Index of |name|, or -1.
  int find(const std::string& name) const;

  void zero_grad();
  double grad_norm() const;
  // Rescales all gradients so their global L2 norm is at most |max_norm|.
  // Returns the norm before clipping.
  double clip_grad_norm(double max_norm);
  int64_t step() const { return step_; }
  void set_step(int64_t step) { step_ = step; }
  // Copies values (not grads or moments) from a set with identical layout.
  void copy_values_from(const ParamSet& other);
  int64_t num_values() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, size_t> index_;
  int64_t step_ = 0;
};

class Tape;

// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Records a computation graph in creation (topological) order. backward()
// visits nodes in reverse creation order exactly once and accumulates
// gradients into the Parameters referenced by param() leaves.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

#ifdef NDEBUG
  static constexpr bool kDefaultCheckFinite = false;
#else
  static constexpr bool kDefaultCheckFinite = true;
#endif

  explicit Tape(bool check_finite = kDefaultCheckFinite)
      : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var scalar(double v);
  // Trainable leaf; repeated calls for the same parameter share one node.
  Var param(Parameter& p);
  // Read-only leaf referencing |p| without copying.
  Var fixed(const Parameter& p);

  void backward(Var root);

  int size() const { return static_cast<int>(nodes_.size()); }
  const Matrix& value(int id) const;
  // Gradient w.r.t. node |id| after backward(); empty if none flowed.
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Op-author interface.
  Var push(Matrix value, bool requires_grad, Backward backward,
           const char* op);
  Matrix& grad_ref(int id);
  bool check_finite() const { return check_finite_; }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;  // external storage for leaves
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::map<const Parameter*, int> param_nodes_;
  bool check_finite_;
};

// ---------------------------------------------------------------------------
// Core ops. Shape mismatches throw std::invalid_argument naming the op and
// both shapes.

Var matmul(Var a, Var b);
// Same shape, or |b| a 1 x n row broadcast over the rows of |a|.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
// log(sigmoid(x)), stable for large |x|.
Var log_sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var transpose(Var a);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
// Row gather (embedding lookup); backward scatter-adds.
Var rows(Var a, const std::vector<int>& ids);
Var slice_rows(Var a, int start, int count);
Var slice_cols(Var a, int start, int count);
// Row-wise log-softmax.
Var log_softmax(Var a);
Var pick(Var a, int row, int col);
// Column vector of the selected (row, col) cells.
Var gather_cells(Var a, const std::vector<std::pair<int, int>>& cells);
Var sum(Var a);
Var mean(Var a);

// Fused LSTM over a T x in sequence. Gate blocks in |wx| (in x 4H), |wh|
// (H x 4H) and |b| (1 x 4H) are ordered input, forget, cell, output. Zero
// initial state; with |reverse| the sequence is processed right to left and
// outputs stay aligned with input positions.
Var lstm(Var inputs, Var wx, Var wh, Var b, bool reverse);

// Linear-chain CRF negative log-likelihood. Paths must start in tag 0.
Var crf_nll(Var emissions, Var transitions, const std::vector<int>& gold);
std::vector<int> crf_decode(const Matrix& emissions, const Matrix& transitions);
// log Z of the constrained chain.
double crf_log_partition(const Matrix& emissions, const Matrix& transitions);

// ---------------------------------------------------------------------------
// Optimization and checking.

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam on the accumulated gradients, which are then zeroed.
void adam_step(ParamSet& params, const AdamConfig& config);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int64_t checked = 0;
};

// Five-point finite differences against backward() for every parameter
// element. Relative error is |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const std::function<Var(Tape&)>& f,
                           ParamSet& params, double epsilon = 1e-3);

// ---------------------------------------------------------------------------
// Persistence: JSON manifest (names, shapes, dtype, offsets, version) plus a
// blob of little-endian float64 values in manifest order.

inline constexpr int kWeightFormatVersion = 1;

void save_weights(const ParamSet& params,
                  const std::filesystem::path& manifest_path,
                  const std::filesystem::path& blob_path);
// Loads into |params|, whose names and shapes must match the manifest.
void load_weights(ParamSet& params, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& blob_path);

// Xavier-uniform initialization for a rows x cols matrix.
template <typename Rng>
Matrix xavier_uniform(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / (rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = (2.0 * rng.uniform() - 1.0) * a;
  }
  return m;
}

}  // namespace retok::ad

#endif  // RETOK_AUTODIFF_H_
