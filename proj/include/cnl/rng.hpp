// Copyright 2026 The CNL Authors.
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
#include <numbers>
#include <string_view>
#include <utility>
#include <vector>

namespace cnl {

/// Portable pseudo-random generator: xoshiro256** seeded through splitmix64.
///
/// The standard library distributions are implementation-defined, so every
/// distribution used by the library (uniform real, bounded integer, normal,
/// shuffle) is implemented here on top of the raw 64-bit stream. Identical
/// seed and call sequence give identical output on every platform.
///
/// Streams: `Stream(key)` derives an independent generator from the original
/// seed and a key. It does not depend on how much of this generator has been
/// consumed, so parallel callers can split by node id or fold index and stay
/// deterministic.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed) { Reseed(seed); }

  uint64_t seed() const { return seed_; }

  Rng Stream(uint64_t key) const {
    uint64_t mixed = seed_ ^ (0x9E3779B97F4A7C15ULL * (key + 1));
    return Rng(SplitMix(mixed));
  }

  // Keys derived from text (e.g. "cng", "mask") so call sites read clearly.
  Rng Stream(std::string_view name) const { return Stream(HashName(name)); }

  uint64_t NextU64() {
    const uint64_t result = Rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = Rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double Uniform() { return static_cast<double>(NextU64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound). Rejection sampling keeps it unbiased.
  uint64_t UniformInt(uint64_t bound) {
    if (bound <= 1) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t draw;
    do {
      draw = NextU64();
    } while (draw >= limit);
    return draw % bound;
  }

  bool Bernoulli(double p) { return Uniform() < p; }

  // Box-Muller; the second variate of each pair is cached.
  double Normal() {
    if (has_cached_normal_) {
      has_cached_normal_ = false;
      return cached_normal_;
    }
    double u1 = Uniform();
    while (u1 <= 0.0) u1 = Uniform();
    const double u2 = Uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
  }

  double Normal(double mean, double stddev) { return mean + stddev * Normal(); }

  template <typename T>
  void Shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(UniformInt(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::vector<size_t> Permutation(size_t n) {
    std::vector<size_t> perm(n);
    for (size_t i = 0; i < n; ++i) perm[i] = i;
    Shuffle(perm);
    return perm;
  }

  static uint64_t SplitMix(uint64_t& x) {
    uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static uint64_t HashName(std::string_view name) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;
    }
    return h;
  }

 private:
  static uint64_t Rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  void Reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = SplitMix(x);
    has_cached_normal_ = false;
  }

  uint64_t seed_;
  uint64_t state_[4];
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace cnl
