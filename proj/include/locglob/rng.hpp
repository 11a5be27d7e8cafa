// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace locglob {

/// Seeded generator with portable sampling helpers. The standard library's
/// distributions are implementation-defined, so the mapping from engine
/// output to values is done here to keep runs bit-reproducible everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n). n must be > 0.
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Index drawn proportionally to non-negative weights.
  std::size_t categorical(std::span<const double> weights);
  /// Standard normal via Box-Muller.
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent child seed from a parent seed and a label, so
/// every random draw in a pipeline traces back to one top-level seed.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label,
                          std::uint64_t index = 0);

}  // namespace locglob
