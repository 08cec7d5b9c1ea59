// Copyright 2026 The ctcbridge Authors. All Rights Reserved.
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

#pragma once

#include <cmath>
#include <cstdint>

namespace ctcbridge {

// Counter-based splittable generator.
//
//   output(key, i) = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)
//   mix64(z)       = SplitMix64 finalizer:
//                      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//                      z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//                      z ^ (z >> 31)
//   split(key, s)  = key' = mix64(key ^ mix64(s + 0xD1B54A32D192ED03))
//
// Every stream value depends only on (key, counter) so sequences are
// identical on every platform with IEEE doubles.
class Rng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kSplitSalt = 0xD1B54A32D192ED03ULL;

  explicit Rng(std::uint64_t seed = 0) : key_(mix64(seed)) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGolden); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n) by rejection on the top bits.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  // Inclusive range.
  long range(long lo, long hi) { return lo + static_cast<long>(below(static_cast<std::uint64_t>(hi - lo + 1))); }

  // Box-Muller; consumes two draws per sample, no cached state.
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  Rng split(std::uint64_t stream) const {
    Rng r;
    r.key_ = mix64(key_ ^ mix64(stream + kSplitSalt));
    return r;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace ctcbridge
