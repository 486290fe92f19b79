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

#ifndef RETOK_UTF8_H_
#define RETOK_UTF8_H_

#include <string>
#include <string_view>

namespace retok {

// Decodes UTF-8 into Unicode scalar values. Throws std::invalid_argument on
// malformed input (overlong forms, surrogates, truncated sequences).
std::u32string chars_of(std::string_view text);

std::string to_utf8(std::u32string_view chars);
std::string to_utf8(char32_t c);

bool is_space(char32_t c);

// A token may start at |pos| without a continuation marker: beginning of the
// sentence, right after whitespace, or on a whitespace character itself.
inline bool is_word_start(std::u32string_view sentence, size_t pos) {
  return pos == 0 || is_space(sentence[pos - 1]) || is_space(sentence[pos]);
}

// NFKC normalization (ICU backed).
std::string nfkc(std::string_view text);

}  // namespace retok

#endif  // RETOK_UTF8_H_
