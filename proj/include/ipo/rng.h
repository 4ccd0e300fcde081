// Copyright 2026 The IPO Workbench Authors
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

#ifndef IPO_RNG_H_
#define IPO_RNG_H_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace ipo {

// Portable random source.
//
// Bits come from std::mt19937_64, whose state transition is fixed by the C++
// standard, so a seed produces the same stream on every conforming platform.
// The std:: distributions are implementation-defined, so uniform and normal
// variates are derived here explicitly:
//   Uniform():  (x >> 11) * 2^-53, x the next 64-bit output; in [0, 1).
//   Normal():   Box-Muller on two uniforms, u1 mapped to (0, 1]; the second
//               variate of each pair is cached and returned next.
//   UniformInt(n): modulo with rejection on 64-bit outputs.
// A port to another language that uses MT19937-64 and these formulas
// reproduces the streams bit for bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }

  double Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double Normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - Uniform();
    const double u2 = Uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Uniform integer in [0, n). n must be positive.
  uint64_t UniformInt(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// SplitMix64 finalizer.
constexpr uint64_t Mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// 64-bit FNV-1a.
constexpr uint64_t Fnv1a64(std::string_view text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : text) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent child seed: Mix64(Mix64(parent ^ Fnv1a64(tag)) + index).
// Children with different tags or indices do not depend on each other, so
// adding a new consumer never perturbs existing streams.
constexpr uint64_t SplitSeed(uint64_t parent, std::string_view tag,
                             uint64_t index = 0) {
  return Mix64(Mix64(parent ^ Fnv1a64(tag)) + index);
}

}  // namespace ipo

#endif  // IPO_RNG_H_
