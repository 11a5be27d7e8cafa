// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include "locglob/common.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "locglob/rng.hpp"

namespace locglob {

CategoricalDist::CategoricalDist(std::vector<double> probs)
    : probs_(std::move(probs)) {
  if (probs_.empty()) throw Error("CategoricalDist: empty support");
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw Error("CategoricalDist: negative or non-finite probability");
    }
  }
  const double s = sum();
  if (std::abs(s - 1.0) > kTolerance) {
    throw Error("CategoricalDist: probabilities sum to " + std::to_string(s));
  }
}

CategoricalDist CategoricalDist::from_weights(std::vector<double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error("CategoricalDist: negative or non-finite weight");
    }
    total += w;
  }
  if (!(total > 0.0)) throw Error("CategoricalDist: zero total mass");
  for (double& w : weights) w /= total;
  return CategoricalDist(std::move(weights));
}

CategoricalDist CategoricalDist::point_mass(std::size_t size,
                                            std::size_t index) {
  std::vector<double> p(size, 0.0);
  p.at(index) = 1.0;
  return CategoricalDist(std::move(p));
}

CategoricalDist CategoricalDist::uniform(std::size_t size) {
  return CategoricalDist(
      std::vector<double>(size, 1.0 / static_cast<double>(size)));
}

double CategoricalDist::sum() const {
  return std::accumulate(probs_.begin(), probs_.end(), 0.0);
}

std::vector<CategoricalDist> NextTokenModel::prefix_dists(
    std::span<const Token> context) const {
  std::vector<CategoricalDist> out;
  out.reserve(context.size() + 1);
  for (std::size_t i = 0; i <= context.size(); ++i) {
    out.push_back(next_dist(context.first(i)));
  }
  return out;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t hash_sequences(std::span<const TokenSeq> seqs) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v),
                               static_cast<std::uint8_t>(v >> 8),
                               static_cast<std::uint8_t>(v >> 16),
                               static_cast<std::uint8_t>(v >> 24)};
    h = fnv1a(b, h);
  };
  for (const auto& s : seqs) {
    mix(static_cast<std::uint32_t>(s.tokens.size()));
    for (Token t : s.tokens) mix(t);
    mix(s.terminated ? 1u : 0u);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw Error("Rng::below: empty range");
  // Lemire-style rejection keeps the draw unbiased.
  const std::uint64_t range = n;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % range);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % range);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw Error("Rng::categorical: zero total weight");
  const double u = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t derive_seed(std::uint64_t parent, std::string_view label,
                          std::uint64_t index) {
  std::uint64_t h = fnv1a(std::span(
      reinterpret_cast<const std::uint8_t*>(label.data()), label.size()));
  // splitmix64 finalizer over (parent, label hash, index)
  std::uint64_t z = parent ^ (h + 0x9e3779b97f4a7c15ull + (index << 6));
  z += index * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace locglob
