// Copyright 2026 The drscreen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace drscreen {

/// Seeded random source for everything that ends up in an artifact.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard distributions are implementation-defined, so the
/// mappings from raw 64-bit words to doubles, bounded integers, normals and
/// shuffles are implemented here:
///   uniform()  top 53 bits * 2^-53, in [0, 1)
///   below(n)   rejection sampling on the largest multiple of n
///   normal()   Marsaglia polar method, one value per accepted pair
///   shuffle()  Fisher-Yates from the back, swap index below(i + 1)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi], inclusive.
  int range(int lo, int hi);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;
/// Derives an independent seed from `seed` and a salt string (FNV-1a + mix64).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt) noexcept;

}  // namespace drscreen
