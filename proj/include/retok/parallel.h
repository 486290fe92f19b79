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

#ifndef RETOK_PARALLEL_H_
#define RETOK_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace retok {

// Calls fn(i) once for every i in [0, n) on up to |threads| workers. Callers
// write into per-index slots, so results do not depend on scheduling. The
// first exception thrown by any call is rethrown after all workers stop.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn);

}  // namespace retok

#endif  // RETOK_PARALLEL_H_
