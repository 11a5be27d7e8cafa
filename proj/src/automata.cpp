// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include "locglob/automata.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include <Eigen/Dense>

namespace locglob::automata {

void DfaConfig::validate() const {
  if (num_states < 1) throw Error("DfaConfig: num_states must be >= 1");
  if (alphabet_size < 1) throw Error("DfaConfig: alphabet_size must be >= 1");
  if (num_neighbors < 1) throw Error("DfaConfig: num_neighbors must be >= 1");
  if (num_symbol_uses < 1) {
    throw Error("DfaConfig: num_symbol_uses must be >= 1");
  }
  if (!(accept_prob >= 0.0 && accept_prob <= 1.0)) {
    throw Error("DfaConfig: accept_prob must lie in [0, 1]");
  }
}

Dfa::Dfa(std::size_t num_states, std::size_t alphabet_size, StateId start,
         std::vector<Edge> edges, std::vector<StateId> accepting)
    : num_states_(num_states),
      alphabet_size_(alphabet_size),
      start_(start),
      edges_(std::move(edges)),
      accepting_(num_states, 0) {
  if (num_states_ == 0) throw Error("Dfa: no states");
  if (start_ >= num_states_) throw Error("Dfa: start state out of range");
  for (const auto& e : edges_) {
    if (e.src >= num_states_ || e.dst >= num_states_ ||
        e.symbol >= alphabet_size_) {
      throw Error("Dfa: edge id out of range");
    }
  }
  std::sort(edges_.begin(), edges_.end());
  for (std::size_t i = 1; i < edges_.size(); ++i) {
    if (edges_[i].src == edges_[i - 1].src &&
        edges_[i].symbol == edges_[i - 1].symbol) {
      throw Error("Dfa: nondeterministic transition on (state " +
                  std::to_string(edges_[i].src) + ", symbol " +
                  std::to_string(edges_[i].symbol) + ")");
    }
  }
  offsets_.assign(num_states_ + 1, 0);
  for (const auto& e : edges_) ++offsets_[e.src + 1];
  for (std::size_t s = 0; s < num_states_; ++s) offsets_[s + 1] += offsets_[s];
  for (StateId a : accepting) {
    if (a >= num_states_) throw Error("Dfa: accepting state out of range");
    accepting_[a] = 1;
  }
}

std::vector<StateId> Dfa::accepting_states() const {
  std::vector<StateId> out;
  for (std::size_t s = 0; s < num_states_; ++s) {
    if (accepting_[s]) out.push_back(static_cast<StateId>(s));
  }
  return out;
}

std::span<const Edge> Dfa::out_edges(StateId s) const {
  return std::span<const Edge>(edges_).subspan(offsets_.at(s),
                                               offsets_[s + 1] - offsets_[s]);
}

std::optional<StateId> Dfa::next(StateId s, Token symbol) const {
  const auto out = out_edges(s);
  auto it = std::lower_bound(
      out.begin(), out.end(), symbol,
      [](const Edge& e, Token sym) { return e.symbol < sym; });
  if (it == out.end() || it->symbol != symbol) return std::nullopt;
  return it->dst;
}

std::size_t Dfa::num_options(StateId s) const {
  return out_edges(s).size() + (accepting(s) ? 1 : 0);
}

// ---------------------------------------------------------------------------

std::vector<bool> reachable_states(const Dfa& dfa) {
  std::vector<bool> seen(dfa.num_states(), false);
  std::deque<StateId> queue{dfa.start_state()};
  seen[dfa.start_state()] = true;
  while (!queue.empty()) {
    const StateId s = queue.front();
    queue.pop_front();
    for (const auto& e : dfa.out_edges(s)) {
      if (!seen[e.dst]) {
        seen[e.dst] = true;
        queue.push_back(e.dst);
      }
    }
  }
  return seen;
}

namespace {

// States from which some accepting state is reachable.
std::vector<bool> can_terminate(const Dfa& dfa) {
  std::vector<bool> ok(dfa.num_states(), false);
  for (std::size_t s = 0; s < dfa.num_states(); ++s) {
    ok[s] = dfa.accepting(static_cast<StateId>(s));
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& e : dfa.edges()) {
      if (!ok[e.src] && ok[e.dst]) {
        ok[e.src] = true;
        changed = true;
      }
    }
  }
  return ok;
}

}  // namespace

std::string check_invariants(const Dfa& dfa) {
  const auto reach = reachable_states(dfa);
  for (const auto& e : dfa.edges()) {
    if (!reach[e.src] || !reach[e.dst]) {
      return "edge touches unreachable state " +
             std::to_string(reach[e.src] ? e.dst : e.src);
    }
  }
  const auto term = can_terminate(dfa);
  for (std::size_t s = 0; s < dfa.num_states(); ++s) {
    if (!reach[s]) continue;
    const auto id = static_cast<StateId>(s);
    if (!dfa.accepting(id) && dfa.out_edges(id).empty()) {
      return "stranding state " + std::to_string(s) +
             " (non-accepting, no out-edges)";
    }
    if (!term[s]) {
      return "non-terminating walk: state " + std::to_string(s) +
             " cannot reach an accepting state";
    }
  }
  return {};
}

std::string check_generator_constraints(const Dfa& dfa,
                                        const DfaConfig& config) {
  if (dfa.num_states() != config.num_states ||
      dfa.alphabet_size() != config.alphabet_size) {
    return "size mismatch with config";
  }
  const std::size_t per_state =
      (config.alphabet_size + config.num_states - 1) / config.num_states;
  std::vector<std::size_t> symbol_uses(dfa.alphabet_size(), 0);
  for (std::size_t s = 0; s < dfa.num_states(); ++s) {
    const auto out = dfa.out_edges(static_cast<StateId>(s));
    std::vector<StateId> succ;
    for (const auto& e : out) {
      succ.push_back(e.dst);
      ++symbol_uses[e.symbol];
    }
    std::sort(succ.begin(), succ.end());
    succ.erase(std::unique(succ.begin(), succ.end()), succ.end());
    if (succ.size() > config.num_neighbors) {
      return "state " + std::to_string(s) + " has " +
             std::to_string(succ.size()) + " successors";
    }
    if (out.size() > per_state) {
      return "state " + std::to_string(s) + " carries " +
             std::to_string(out.size()) + " out-symbols";
    }
  }
  for (std::size_t a = 0; a < symbol_uses.size(); ++a) {
    if (symbol_uses[a] > config.num_symbol_uses) {
      return "symbol " + std::to_string(a) + " used on " +
             std::to_string(symbol_uses[a]) + " edges";
    }
  }
  return {};
}

Dfa prune_unreachable(const Dfa& dfa) {
  const auto reach = reachable_states(dfa);
  std::vector<Edge> kept;
  for (const auto& e : dfa.edges()) {
    if (reach[e.src]) kept.push_back(e);
  }
  return Dfa(dfa.num_states(), dfa.alphabet_size(), dfa.start_state(),
             std::move(kept), dfa.accepting_states());
}

Dfa generate_dfa(const DfaConfig& config, std::size_t max_attempts) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t n = config.num_states;
  const std::size_t sigma = config.alphabet_size;
  const std::size_t per_state = (sigma + n - 1) / n;
  const std::size_t k = std::min(config.num_neighbors, n);

  std::string last_violation = "none";
  std::vector<StateId> all_states(n);
  for (std::size_t s = 0; s < n; ++s) all_states[s] = static_cast<StateId>(s);

  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<std::size_t> remaining(sigma, config.num_symbol_uses);
    std::vector<Edge> edges;
    std::vector<StateId> accepting;

    for (std::size_t s = 0; s < n; ++s) {
      // Partial Fisher-Yates: the first k entries are a uniform sample
      // without replacement.
      std::vector<StateId> pool = all_states;
      for (std::size_t i = 0; i < k; ++i) {
        std::swap(pool[i], pool[i + rng.below(n - i)]);
      }
      std::vector<char> used(sigma, 0);
      std::vector<Token> available;
      // Round-robin the state's symbol budget over its neighbors.
      for (std::size_t slot = 0; slot < per_state; ++slot) {
        available.clear();
        for (std::size_t a = 0; a < sigma; ++a) {
          if (remaining[a] > 0 && !used[a]) {
            available.push_back(static_cast<Token>(a));
          }
        }
        if (available.empty()) break;
        const Token sym = available[rng.below(available.size())];
        edges.push_back({static_cast<StateId>(s), sym, pool[slot % k]});
        used[sym] = 1;
        --remaining[sym];
      }
      if (rng.bernoulli(config.accept_prob)) {
        accepting.push_back(static_cast<StateId>(s));
      }
    }

    Dfa dfa = prune_unreachable(
        Dfa(n, sigma, 0, std::move(edges), std::move(accepting)));
    if (dfa.edges().empty()) {
      last_violation = "empty edge set after pruning";
      continue;
    }
    if (auto v = check_invariants(dfa); !v.empty()) {
      last_violation = v;
      continue;
    }
    return dfa;
  }
  throw GenerationError("generate_dfa: no valid automaton after " +
                        std::to_string(max_attempts) +
                        " attempts; last violation: " + last_violation);
}

RunResult run(const Dfa& dfa, std::span<const Token> tokens) {
  StateId s = dfa.start_state();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto nxt = tokens[i] < dfa.alphabet_size()
                         ? dfa.next(s, tokens[i])
                         : std::nullopt;
    if (!nxt) return RunResult{std::nullopt, i};
    s = *nxt;
  }
  return RunResult{s, 0};
}

// ---------------------------------------------------------------------------

CategoricalDist next_token_distribution(const Dfa& dfa, StateId state) {
  const auto out = dfa.out_edges(state);
  const std::size_t options = dfa.num_options(state);
  if (options == 0) {
    throw Error("next_token_distribution: state " + std::to_string(state) +
                " has no out-edges and is not accepting");
  }
  std::vector<double> p(dfa.dist_size(), 0.0);
  const double w = 1.0 / static_cast<double>(options);
  for (const auto& e : out) p[e.symbol] = w;
  if (dfa.accepting(state)) p[dfa.eos()] = w;
  return CategoricalDist(std::move(p));
}

std::vector<double> occupancy_measure(const Dfa& dfa) {
  if (auto v = check_invariants(dfa); !v.empty()) {
    throw Error("occupancy_measure: " + v);
  }
  const auto reach = reachable_states(dfa);
  std::vector<int> index(dfa.num_states(), -1);
  std::vector<StateId> states;
  for (std::size_t s = 0; s < dfa.num_states(); ++s) {
    if (reach[s]) {
      index[s] = static_cast<int>(states.size());
      states.push_back(static_cast<StateId>(s));
    }
  }
  const auto m = static_cast<Eigen::Index>(states.size());
  // mu = e_start + mu P  <=>  (I - P^T) mu = e_start
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(m, m);
  for (const StateId s : states) {
    const double w = 1.0 / static_cast<double>(dfa.num_options(s));
    for (const auto& e : dfa.out_edges(s)) {
      a(index[e.dst], index[s]) -= w;
    }
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
  rhs(index[dfa.start_state()]) = 1.0;
  const Eigen::VectorXd mu = a.fullPivLu().solve(rhs);
  std::vector<double> out(dfa.num_states(), 0.0);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!std::isfinite(mu(i)) || mu(i) < -1e-9) {
      throw Error("occupancy_measure: singular walk system");
    }
    out[states[i]] = std::max(0.0, mu(i));
  }
  return out;
}

CategoricalDist ground_truth_global(const Dfa& dfa,
                                    std::span<const Token> global_ctx) {
  const auto r = run(dfa, global_ctx);
  if (!r.accepted()) {
    throw Error("ground_truth_global: context rejected at index " +
                std::to_string(r.reject_index));
  }
  const auto out = dfa.out_edges(*r.state);
  if (out.empty()) {
    throw Error("ground_truth_global: state " + std::to_string(*r.state) +
                " has no continuation");
  }
  std::vector<double> p(dfa.dist_size(), 0.0);
  const double w = 1.0 / static_cast<double>(out.size());
  for (const auto& e : out) {
    const auto nd = next_token_distribution(dfa, e.dst);
    for (std::size_t y = 0; y < p.size(); ++y) p[y] += w * nd[y];
  }
  return CategoricalDist::from_weights(std::move(p));
}

CategoricalDist ground_truth_local(const Dfa& dfa, Token local_token) {
  return ground_truth_local(dfa, local_token, occupancy_measure(dfa));
}

CategoricalDist ground_truth_local(const Dfa& dfa, Token local_token,
                                   std::span<const double> occupancy) {
  std::vector<double> p(dfa.dist_size(), 0.0);
  bool any = false;
  for (const auto& e : dfa.edges()) {
    if (e.symbol != local_token) continue;
    const double w =
        occupancy[e.src] / static_cast<double>(dfa.num_options(e.src));
    if (w <= 0.0) continue;
    any = true;
    const auto nd = next_token_distribution(dfa, e.dst);
    for (std::size_t y = 0; y < p.size(); ++y) p[y] += w * nd[y];
  }
  if (!any) {
    throw Error("ground_truth_local: symbol " + std::to_string(local_token) +
                " labels no reachable edge");
  }
  return CategoricalDist::from_weights(std::move(p));
}

CategoricalDist emission_marginal(const Dfa& dfa) {
  const auto mu = occupancy_measure(dfa);
  std::vector<double> p(dfa.dist_size(), 0.0);
  for (std::size_t s = 0; s < dfa.num_states(); ++s) {
    if (mu[s] <= 0.0) continue;
    const auto id = static_cast<StateId>(s);
    const double w = mu[s] / static_cast<double>(dfa.num_options(id));
    for (const auto& e : dfa.out_edges(id)) p[e.symbol] += w;
    if (dfa.accepting(id)) p[dfa.eos()] += w;
  }
  return CategoricalDist::from_weights(std::move(p));
}

// ---------------------------------------------------------------------------

TokenSeq sample_walk(const Dfa& dfa, Rng& rng, std::size_t max_len) {
  TokenSeq seq;
  seq.terminated = false;
  StateId s = dfa.start_state();
  while (max_len == 0 || seq.tokens.size() < max_len) {
    const auto out = dfa.out_edges(s);
    const std::size_t options = dfa.num_options(s);
    if (options == 0) {
      throw Error("sample_walk: stranded in state " + std::to_string(s));
    }
    const std::size_t pick = rng.below(options);
    if (pick == out.size()) {
      seq.terminated = true;
      break;
    }
    seq.tokens.push_back(out[pick].symbol);
    s = out[pick].dst;
  }
  return seq;
}

std::vector<TokenSeq> sample_corpus(const Dfa& dfa, std::size_t num_walks,
                                    std::uint64_t seed, std::size_t max_len) {
  Rng rng(seed);
  std::vector<TokenSeq> out;
  out.reserve(num_walks);
  for (std::size_t i = 0; i < num_walks; ++i) {
    out.push_back(sample_walk(dfa, rng, max_len));
  }
  return out;
}

std::vector<Token> SurprisingContext::full_context() const {
  std::vector<Token> c = global_ctx.tokens;
  c.push_back(local_token);
  return c;
}

std::vector<Token> used_symbols(const Dfa& dfa) {
  std::vector<char> used(dfa.alphabet_size(), 0);
  for (const auto& e : dfa.edges()) used[e.symbol] = 1;
  std::vector<Token> out;
  for (std::size_t a = 0; a < used.size(); ++a) {
    if (used[a]) out.push_back(static_cast<Token>(a));
  }
  return out;
}

SurprisingContext make_surprising_context(const Dfa& dfa, Rng& rng,
                                          std::size_t max_len,
                                          std::size_t max_retries) {
  const auto symbols = used_symbols(dfa);
  for (std::size_t attempt = 0; attempt < max_retries; ++attempt) {
    TokenSeq walk = sample_walk(dfa, rng, max_len);
    if (walk.tokens.empty()) continue;
    const std::size_t len = 1 + rng.below(walk.tokens.size());
    walk.tokens.resize(len);
    walk.terminated = false;

    StateId s = dfa.start_state();
    double tau = 1.0;
    for (Token t : walk.tokens) {
      tau = std::min(tau, 1.0 / static_cast<double>(dfa.num_options(s)));
      s = *dfa.next(s, t);
    }
    if (dfa.out_edges(s).empty()) continue;
    std::vector<Token> candidates;
    for (Token a : symbols) {
      if (!dfa.next(s, a)) candidates.push_back(a);
    }
    if (candidates.empty()) continue;
    SurprisingContext ctx;
    ctx.global_ctx = std::move(walk);
    ctx.local_token = candidates[rng.below(candidates.size())];
    ctx.epsilon = 0.0;
    ctx.tau = tau;
    return ctx;
  }
  throw Error("make_surprising_context: no surprising context after " +
              std::to_string(max_retries) + " walks");
}

std::vector<SurprisingContext> make_surprising_contexts(const Dfa& dfa,
                                                        std::size_t count,
                                                        std::uint64_t seed,
                                                        std::size_t max_len) {
  Rng rng(seed);
  std::vector<SurprisingContext> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(make_surprising_context(dfa, rng, max_len));
  }
  return out;
}

std::vector<InDistContext> sample_in_distribution_contexts(
    const Dfa& dfa, std::size_t count, std::uint64_t seed,
    std::size_t max_len) {
  Rng rng(seed);
  std::vector<InDistContext> out;
  out.reserve(count);
  while (out.size() < count) {
    const TokenSeq walk = sample_walk(dfa, rng, max_len);
    // Prefix positions whose continuation was actually generated.
    const std::size_t positions =
        walk.tokens.size() + (walk.terminated ? 1 : 0);
    if (positions == 0) continue;
    const std::size_t len = rng.below(positions);
    std::vector<Token> ctx(walk.tokens.begin(), walk.tokens.begin() + len);
    const auto r = run(dfa, ctx);
    out.push_back({std::move(ctx), next_token_distribution(dfa, *r.state)});
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const Dfa& dfa) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : dfa.edges()) edges.push_back({e.src, e.symbol, e.dst});
  return {{"num_states", dfa.num_states()},
          {"alphabet_size", dfa.alphabet_size()},
          {"start", dfa.start_state()},
          {"accepting", dfa.accepting_states()},
          {"edges", std::move(edges)}};
}

Dfa dfa_from_json(const nlohmann::json& j) {
  for (const char* key :
       {"num_states", "alphabet_size", "start", "accepting", "edges"}) {
    if (!j.contains(key)) {
      throw Error(std::string("dfa json: missing field '") + key + "'");
    }
  }
  std::vector<Edge> edges;
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 3) {
      throw Error("dfa json: edges must be [src, symbol, dst] triples");
    }
    edges.push_back({e[0].get<StateId>(), e[1].get<Token>(),
                     e[2].get<StateId>()});
  }
  return Dfa(j.at("num_states").get<std::size_t>(),
             j.at("alphabet_size").get<std::size_t>(),
             j.at("start").get<StateId>(), std::move(edges),
             j.at("accepting").get<std::vector<StateId>>());
}

nlohmann::json to_json(const DfaConfig& c) {
  return {{"num_states", c.num_states},
          {"alphabet_size", c.alphabet_size},
          {"num_neighbors", c.num_neighbors},
          {"num_symbol_uses", c.num_symbol_uses},
          {"accept_prob", c.accept_prob},
          {"seed", c.seed}};
}

DfaConfig dfa_config_from_json(const nlohmann::json& j) {
  DfaConfig c;
  c.num_states = j.value("num_states", c.num_states);
  c.alphabet_size = j.value("alphabet_size", c.alphabet_size);
  c.num_neighbors = j.value("num_neighbors", c.num_neighbors);
  c.num_symbol_uses = j.value("num_symbol_uses", c.num_symbol_uses);
  c.accept_prob = j.value("accept_prob", c.accept_prob);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

nlohmann::json to_json(const SurprisingContext& ctx) {
  return {{"global_ctx", ctx.global_ctx.tokens},
          {"local_token", ctx.local_token},
          {"epsilon", ctx.epsilon},
          {"tau", ctx.tau}};
}

SurprisingContext surprising_context_from_json(const nlohmann::json& j) {
  SurprisingContext ctx;
  ctx.global_ctx.tokens = j.at("global_ctx").get<std::vector<Token>>();
  ctx.global_ctx.terminated = false;
  ctx.local_token = j.at("local_token").get<Token>();
  ctx.epsilon = j.value("epsilon", 0.0);
  ctx.tau = j.value("tau", 0.0);
  return ctx;
}

}  // namespace locglob::automata
