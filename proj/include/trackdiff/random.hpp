/*
Copyright 2026 The trackdiff Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include <cstdint>
#include <initializer_list>

namespace trackdiff {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based stream. Substreams are keyed by integer coordinates, so
// per-cell draws do not depend on evaluation order or thread count.
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed) : key_(mix64(seed)) {}

  constexpr Rng fork(std::initializer_list<std::uint64_t> coords) const {
    std::uint64_t k = key_;
    for (std::uint64_t c : coords) k = mix64(k ^ mix64(c + 0x632BE59BD9B4E019ULL));
    Rng r(0);
    r.key_ = k;
    return r;
  }

  constexpr std::uint64_t next_u64() { return mix64(key_ + 0xD1B54A32D192ED03ULL * ++counter_); }

  // [0, 1)
  constexpr double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  // (0, 1)
  constexpr double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace trackdiff
