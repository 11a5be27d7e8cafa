// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// Random regular languages: generation, sampling, surprising contexts and
// exact ground-truth next-token distributions.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "locglob/common.hpp"
#include "locglob/rng.hpp"

namespace locglob::automata {

struct DfaConfig {
  std::size_t num_states = 8;
  std::size_t alphabet_size = 128;
  std::size_t num_neighbors = 4;
  std::size_t num_symbol_uses = 4;
  double accept_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Edge {
  StateId src;
  Token symbol;
  StateId dst;

  bool operator==(const Edge&) const = default;
  auto operator<=>(const Edge&) const = default;
};

class Dfa {
 public:
  /// Builds the transition table. Throws when two edges share a
  /// (src, symbol) key or an id is out of range.
  Dfa(std::size_t num_states, std::size_t alphabet_size, StateId start,
      std::vector<Edge> edges, std::vector<StateId> accepting);

  std::size_t num_states() const { return num_states_; }
  std::size_t alphabet_size() const { return alphabet_size_; }
  /// The EOS index in next-token distributions.
  Token eos() const { return static_cast<Token>(alphabet_size_); }
  std::size_t dist_size() const { return alphabet_size_ + 1; }
  StateId start_state() const { return start_; }

  bool accepting(StateId s) const { return accepting_.at(s) != 0; }
  std::vector<StateId> accepting_states() const;

  /// All edges sorted by (src, symbol).
  std::span<const Edge> edges() const { return edges_; }
  std::span<const Edge> out_edges(StateId s) const;
  std::optional<StateId> next(StateId s, Token symbol) const;
  /// Out-edges plus the EOS option when accepting.
  std::size_t num_options(StateId s) const;

  bool operator==(const Dfa&) const = default;

 private:
  std::size_t num_states_;
  std::size_t alphabet_size_;
  StateId start_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_;  // CSR offsets into edges_, size n+1
  std::vector<char> accepting_;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Result of running the automaton over a sequence.
struct RunResult {
  std::optional<StateId> state;
  std::size_t reject_index = 0;  // first invalid token when !state

  bool accepted() const { return state.has_value(); }
};

// --- structure --------------------------------------------------------------

Dfa generate_dfa(const DfaConfig& config,
                 std::size_t max_attempts = 10'000);
Dfa prune_unreachable(const Dfa& dfa);
RunResult run(const Dfa& dfa, std::span<const Token> tokens);

/// States reachable from the start state.
std::vector<bool> reachable_states(const Dfa& dfa);

/// Every structural invariant a usable language must satisfy. Returns an
/// empty string when valid, otherwise a description of the first violation.
std::string check_invariants(const Dfa& dfa);
/// Degree and symbol-budget constraints from the generator configuration.
std::string check_generator_constraints(const Dfa& dfa,
                                        const DfaConfig& config);

// --- distributions ----------------------------------------------------------

CategoricalDist next_token_distribution(const Dfa& dfa, StateId state);

/// Expected visit count of each state under the uniform random walk.
/// Unreachable states get 0. Throws if the walk can fail to terminate.
std::vector<double> occupancy_measure(const Dfa& dfa);

CategoricalDist ground_truth_global(const Dfa& dfa,
                                    std::span<const Token> global_ctx);
CategoricalDist ground_truth_local(const Dfa& dfa, Token local_token);
CategoricalDist ground_truth_local(const Dfa& dfa, Token local_token,
                                   std::span<const double> occupancy);

/// Probability of emitting each token (EOS last) at a uniformly chosen
/// position of a walk; the exact symbol-emission marginal.
CategoricalDist emission_marginal(const Dfa& dfa);

// --- sampling ---------------------------------------------------------------

inline constexpr std::size_t kDefaultMaxWalkLength = 64;

/// max_len == 0 disables the cap.
TokenSeq sample_walk(const Dfa& dfa, Rng& rng,
                     std::size_t max_len = kDefaultMaxWalkLength);
std::vector<TokenSeq> sample_corpus(const Dfa& dfa, std::size_t num_walks,
                                    std::uint64_t seed,
                                    std::size_t max_len = kDefaultMaxWalkLength);

struct SurprisingContext {
  TokenSeq global_ctx;  // X_G
  Token local_token = 0;  // X_L
  /// Certified upper bound on p(X_L | X_G). Zero means the probability is
  /// exactly zero (automaton-derived contexts).
  double epsilon = 0.0;
  /// Smallest in-context probability along X_G.
  double tau = 0.0;

  std::vector<Token> full_context() const;
  bool operator==(const SurprisingContext&) const = default;
};

/// Symbols labelling at least one edge.
std::vector<Token> used_symbols(const Dfa& dfa);

SurprisingContext make_surprising_context(const Dfa& dfa, Rng& rng,
                                          std::size_t max_len =
                                              kDefaultMaxWalkLength,
                                          std::size_t max_retries = 1000);
std::vector<SurprisingContext> make_surprising_contexts(
    const Dfa& dfa, std::size_t count, std::uint64_t seed,
    std::size_t max_len = kDefaultMaxWalkLength);

/// In-distribution evaluation points: a walk prefix and the exact next-token
/// distribution after it.
struct InDistContext {
  std::vector<Token> context;
  CategoricalDist truth;
};
std::vector<InDistContext> sample_in_distribution_contexts(
    const Dfa& dfa, std::size_t count, std::uint64_t seed,
    std::size_t max_len = kDefaultMaxWalkLength);

// --- serialization ----------------------------------------------------------

nlohmann::json to_json(const Dfa& dfa);
Dfa dfa_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DfaConfig& config);
DfaConfig dfa_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SurprisingContext& ctx);
SurprisingContext surprising_context_from_json(const nlohmann::json& j);

}  // namespace locglob::automata
