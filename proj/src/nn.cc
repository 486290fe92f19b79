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

#include "retok/nn.h"

namespace retok::nn {

LstmParams add_lstm(ParamSet& params, const std::string& prefix, int input,
                    int hidden, Rng& rng) {
  LstmParams p;
  p.wx = params.add(prefix + ".wx", ad::xavier_uniform(input, 4 * hidden, rng));
  p.wh = params.add(prefix + ".wh", ad::xavier_uniform(hidden, 4 * hidden, rng));
  Matrix b = Matrix::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();
  p.b = params.add(prefix + ".b", std::move(b));
  return p;
}

LinearParams add_linear(ParamSet& params, const std::string& prefix, int input,
                        int output, Rng& rng) {
  LinearParams p;
  p.w = params.add(prefix + ".w", ad::xavier_uniform(input, output, rng));
  p.b = params.add(prefix + ".b", Matrix::Zero(1, output));
  return p;
}

Var linear(Binder& bind, const LinearParams& p, Var x) {
  return ad::add(ad::matmul(x, bind(p.w)), bind(p.b));
}

MlpParams add_mlp(ParamSet& params, const std::string& prefix,
                  const std::vector<int>& dims, Rng& rng) {
  MlpParams p;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    p.layers.push_back(add_linear(params, prefix + "." + std::to_string(i),
                                  dims[i], dims[i + 1], rng));
  }
  return p;
}

Var mlp(Binder& bind, const MlpParams& p, Var x) {
  for (size_t i = 0; i < p.layers.size(); ++i) {
    x = linear(bind, p.layers[i], x);
    if (i + 1 < p.layers.size()) x = ad::tanh(x);
  }
  return x;
}

BiLstmParams add_bilstm(ParamSet& params, const std::string& prefix,
                        int input, int hidden, Rng& rng) {
  BiLstmParams p;
  p.forward = add_lstm(params, prefix + ".fwd", input, hidden, rng);
  p.backward = add_lstm(params, prefix + ".bwd", input, hidden, rng);
  return p;
}

Var bilstm(Binder& bind, const BiLstmParams& p, Var inputs) {
  Var f = ad::lstm(inputs, bind(p.forward.wx), bind(p.forward.wh),
                   bind(p.forward.b), false);
  Var b = ad::lstm(inputs, bind(p.backward.wx), bind(p.backward.wh),
                   bind(p.backward.b), true);
  return ad::concat_cols({f, b});
}

}  // namespace retok::nn
