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

#include "retok/rng.h"

namespace retok {

// splitmix64 finalizer.
uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng Rng::stream(uint64_t seed, std::string_view component, uint64_t record) {
  uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a over the component name
  for (unsigned char c : component) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return Rng(mix64(mix64(seed) ^ h) ^ mix64(record + 0x632BE59BD9B4E019ULL));
}

uint64_t Rng::below(uint64_t n) {
  // Rejection sampling keeps the draw exactly uniform.
  const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

}  // namespace retok
