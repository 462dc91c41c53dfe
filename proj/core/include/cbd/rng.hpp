// Copyright 2026 The CBD Authors
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

#include <cstdint>
#include <random>

namespace cbd {

// Deterministic random stream. All samplers are implemented on top of
// raw mt19937_64 draws instead of std <random> distributions, whose
// algorithms are implementation-defined; outputs are therefore
// bit-identical across standard libraries for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] via rejection (unbiased).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal, Box-Muller (both values used, no caching).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  double lognormal(double mu, double sigma);

  // Gamma(shape, 1), Marsaglia-Tsang for shape >= 1 with the usual
  // boost for shape < 1.
  double gamma(double shape);

  double beta(double a, double b);

  bool bernoulli(double p) { return uniform() < p; }

  // Derives an independent stream; mixing is splitmix64-style so
  // nearby (seed, index) pairs decorrelate.
  static std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

 private:
  std::mt19937_64 engine_;
};

}  // namespace cbd
