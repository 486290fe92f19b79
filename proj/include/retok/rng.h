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

#ifndef RETOK_RNG_H_
#define RETOK_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>

namespace retok {

// Seeded generator with platform-independent draws. Named sub-streams are
// derived from (seed, component, record id) so parallel workers never share
// state and results do not depend on scheduling.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  static Rng stream(uint64_t seed, std::string_view component,
                    uint64_t record = 0);

  uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  // Uniform integer in [0, n).
  uint64_t below(uint64_t n);
  bool bernoulli(double p) { return p >= 1.0 || (p > 0.0 && uniform() < p); }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

uint64_t mix64(uint64_t x);

}  // namespace retok

#endif  // RETOK_RNG_H_
