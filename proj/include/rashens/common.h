/*
 * Copyright 2026 The Rashens Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef RASHENS_COMMON_H_
#define RASHENS_COMMON_H_

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace rashens {

// Error raised by every module. `stage` names the pipeline stage or module
// that failed so the CLI and HTTP layers can surface it verbatim.
class Error : public std::runtime_error {
 public:
  Error(std::string stage, const std::string& message)
      : std::runtime_error(message), stage_(std::move(stage)) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Derives an independent 64-bit seed from a base seed and a stream index
// (splitmix64 finalizer). Used so that per-candidate, per-repeat and
// per-restart random streams never depend on evaluation order.
inline uint64_t DeriveSeed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Shortest decimal text that parses back to the same double.
inline std::string FormatDouble(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline constexpr const char* kVersion = "rashens 0.1.0";

}  // namespace rashens

#endif  // RASHENS_COMMON_H_
