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

#ifndef RETOK_NN_H_
#define RETOK_NN_H_

#include <string>
#include <vector>

#include "retok/autodiff.h"
#include "retok/rng.h"

namespace retok::nn {

using ad::Matrix;
using ad::ParamSet;
using ad::Tape;
using ad::Var;

// Binds parameters to a tape: trainable nodes for a mutable ParamSet,
// read-only references for a const one.
class Binder {
 public:
  Binder(Tape& tape, ParamSet& params)
      : tape_(tape), params_(&params), mutable_(&params) {}
  Binder(Tape& tape, const ParamSet& params)
      : tape_(tape), params_(&params) {}
  Var operator()(size_t index) {
    return mutable_ ? tape_.param((*mutable_)[index])
                    : tape_.fixed((*params_)[index]);
  }
  Tape& tape() { return tape_; }
  bool train() const { return mutable_ != nullptr; }

 private:
  Tape& tape_;
  const ParamSet* params_;
  ParamSet* mutable_ = nullptr;
};

struct LstmParams {
  size_t wx = 0;
  size_t wh = 0;
  size_t b = 0;
};

// Xavier-uniform weights, zero bias with the forget gate bias at 1.
LstmParams add_lstm(ParamSet& params, const std::string& prefix, int input,
                    int hidden, Rng& rng);

struct LinearParams {
  size_t w = 0;
  size_t b = 0;
};

LinearParams add_linear(ParamSet& params, const std::string& prefix, int input,
                        int output, Rng& rng);
Var linear(Binder& bind, const LinearParams& p, Var x);

// Linear layers with tanh between them (none after the last).
struct MlpParams {
  std::vector<LinearParams> layers;
};

MlpParams add_mlp(ParamSet& params, const std::string& prefix,
                  const std::vector<int>& dims, Rng& rng);
Var mlp(Binder& bind, const MlpParams& p, Var x);

struct BiLstmParams {
  LstmParams forward;
  LstmParams backward;
};

BiLstmParams add_bilstm(ParamSet& params, const std::string& prefix,
                        int input, int hidden, Rng& rng);
// T x 2H: forward states then backward states.
Var bilstm(Binder& bind, const BiLstmParams& p, Var inputs);

}  // namespace retok::nn

#endif  // RETOK_NN_H_
