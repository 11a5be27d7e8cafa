// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared vocabulary types: token ids, errors, categorical distributions.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace locglob {

using Token = std::uint32_t;
using StateId = std::uint32_t;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A token sequence. `terminated` is set when the generator emitted EOS
/// after the last token; the EOS id itself is never stored in `tokens`.
struct TokenSeq {
  std::vector<Token> tokens;
  bool terminated = true;

  bool operator==(const TokenSeq&) const = default;
};

/// Normalized probability vector over vocab ∪ {EOS}. EOS is the last index.
class CategoricalDist {
 public:
  static constexpr double kTolerance = 1e-9;

  CategoricalDist() = default;

  /// Takes ownership of an already normalized vector; throws if any entry is
  /// negative or the sum is off by more than kTolerance.
  explicit CategoricalDist(std::vector<double> probs);

  /// Normalizes non-negative weights. Throws on zero or non-finite mass.
  static CategoricalDist from_weights(std::vector<double> weights);
  static CategoricalDist point_mass(std::size_t size, std::size_t index);
  static CategoricalDist uniform(std::size_t size);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }
  double sum() const;

  bool operator==(const CategoricalDist&) const = default;

 private:
  std::vector<double> probs_;
};

/// Anything that can produce next-token distributions for a context:
/// trained models, stubs in tests, wrappers.
class NextTokenModel {
 public:
  virtual ~NextTokenModel() = default;
  /// Size of the output distribution (vocab + EOS).
  virtual std::size_t output_size() const = 0;
  virtual CategoricalDist next_dist(std::span<const Token> context) const = 0;
  /// Distributions after every prefix of `context`: element i is the
  /// prediction after the first i tokens (so the result has size+1 entries).
  virtual std::vector<CategoricalDist> prefix_dists(
      std::span<const Token> context) const;
};

/// 64-bit FNV-1a, used for corpus fingerprints in provenance records.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes,
                    std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t hash_sequences(std::span<const TokenSeq> seqs);
std::string hex64(std::uint64_t v);

}  // namespace locglob
