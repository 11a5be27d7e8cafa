// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include "locglob/hypotheses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "locglob/eval.hpp"

namespace locglob::hypotheses {

namespace {

template <typename E>
struct Names {
  E value;
  const char* name;
};

constexpr Names<Kind> kKinds[] = {
    {Kind::unigram, "unigram"},
    {Kind::local, "local"},
    {Kind::global, "global"},
    {Kind::ignore, "ignore"},
    {Kind::interp_linear, "interp_linear"},
    {Kind::interp_loglinear, "interp_loglinear"},
    {Kind::restart, "restart"},
};
constexpr Names<Source> kSources[] = {
    {Source::dfa_exact, "dfa_exact"},
    {Source::bigram_counts, "bigram_counts"},
    {Source::beam_lm, "beam_lm"},
    {Source::lm, "lm"},
};
constexpr Names<TieMode> kTieModes[] = {
    {TieMode::free, "free"},
    {TieMode::complementary, "complementary"},
};

template <typename E, std::size_t N>
std::string name_of(const Names<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  throw Error("unnamed enum value");
}

template <typename E, std::size_t N>
E parse(const Names<E> (&table)[N], const std::string& s, const char* what) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  std::string known;
  for (const auto& e : table) known += std::string(known.empty() ? "" : ", ") + e.name;
  throw Error(std::string("unknown ") + what + " '" + s + "' (expected one of " +
              known + ")");
}

void check_lambda(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw Error(std::string(what) + " must be in [0, 1], got " +
                std::to_string(v));
  }
}

void check_same_size(const CategoricalDist& a, const CategoricalDist& b) {
  if (a.size() != b.size()) {
    throw Error("distributions over different supports (" +
                std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                ")");
  }
}

const NextTokenModel& need(const NextTokenModel* m, const char* what) {
  if (!m) throw Error(std::string("hypothesis needs ") + what);
  return *m;
}

}  // namespace

std::string to_string(Kind k) { return name_of(kKinds, k); }
std::string to_string(Source s) { return name_of(kSources, s); }
std::string to_string(TieMode t) { return name_of(kTieModes, t); }
Kind kind_from_string(const std::string& s) {
  return parse(kKinds, s, "hypothesis kind");
}
Source source_from_string(const std::string& s) {
  return parse(kSources, s, "hypothesis source");
}
TieMode tie_mode_from_string(const std::string& s) {
  return parse(kTieModes, s, "tie mode");
}

void InterpolationParams::validate() const {
  check_lambda(lambda, "lambda");
  check_lambda(lambda1, "lambda1");
  check_lambda(lambda2, "lambda2");
  if (tie_mode == TieMode::complementary &&
      std::abs(lambda1 + lambda2 - 1.0) > 1e-12) {
    throw Error("complementary tie requires lambda2 = 1 - lambda1");
  }
}

InterpolationParams InterpolationParams::complementary(double lambda1) {
  InterpolationParams p;
  p.tie_mode = TieMode::complementary;
  p.lambda1 = lambda1;
  p.lambda2 = 1.0 - lambda1;
  return p;
}

std::string Hypothesis::name() const {
  if (!label.empty()) return label;
  std::string n = to_string(kind);
  if (kind == Kind::interp_loglinear && params.tie_mode == TieMode::free) {
    n += "_free";
  }
  const bool uses_local = kind == Kind::local || kind == Kind::interp_linear ||
                          kind == Kind::interp_loglinear;
  const bool uses_global = kind == Kind::global ||
                           kind == Kind::interp_linear ||
                           kind == Kind::interp_loglinear;
  if (uses_local && local_source != Source::dfa_exact) {
    n += "[" + to_string(local_source) + "]";
  }
  if (uses_global && global_source != Source::dfa_exact) {
    n += "[" + to_string(global_source) + "]";
  }
  return n;
}

void Hypothesis::validate() const {
  params.validate();
  if (local_source != Source::dfa_exact &&
      local_source != Source::bigram_counts) {
    throw Error("local estimates come from dfa_exact or bigram_counts");
  }
  if (global_source != Source::dfa_exact && global_source != Source::beam_lm) {
    throw Error("global estimates come from dfa_exact or beam_lm");
  }
  if (beam_width == 0) throw Error("beam_width must be positive");
  if (fit && kind != Kind::interp_linear && kind != Kind::interp_loglinear) {
    throw Error("only interpolations can be fitted");
  }
}

CategoricalDist hyp_local(const Context& ctx, Source source,
                          const Sources& src) {
  switch (source) {
    case Source::dfa_exact:
      if (!src.dfa) throw Error("dfa_exact local estimate needs an automaton");
      return src.occupancy.empty()
                 ? automata::ground_truth_local(*src.dfa, ctx.local_token)
                 : automata::ground_truth_local(*src.dfa, ctx.local_token,
                                                src.occupancy);
    case Source::bigram_counts:
      if (!src.counts) throw Error("bigram local estimate needs counts");
      return corpus::bigram_dist(*src.counts, ctx.local_token);
    default:
      throw Error("local estimates come from dfa_exact or bigram_counts");
  }
}

CategoricalDist hyp_global(const Context& ctx, Source source,
                           const Sources& src, std::size_t beam_width) {
  switch (source) {
    case Source::dfa_exact:
      if (!src.dfa) throw Error("dfa_exact global estimate needs an automaton");
      return automata::ground_truth_global(*src.dfa, ctx.global_ctx.tokens);
    case Source::beam_lm:
      return beam_global(need(src.helper_lm, "a helper model for beam_lm"),
                         ctx.global_ctx.tokens, beam_width);
    default:
      throw Error("global estimates come from dfa_exact or beam_lm");
  }
}

CategoricalDist hyp_unigram(const corpus::CountTable& counts) {
  return corpus::unigram_dist(counts);
}

CategoricalDist hyp_ignore(const NextTokenModel& lm, const Context& ctx) {
  return lm.next_dist(ctx.global_ctx.tokens);
}

CategoricalDist beam_global(const NextTokenModel& helper,
                            std::span<const Token> global_ctx,
                            std::size_t beam_width) {
  if (beam_width == 0) throw Error("beam_width must be positive");
  const CategoricalDist first = helper.next_dist(global_ctx);
  const std::size_t eos = first.size() - 1;
  std::vector<std::size_t> order(eos);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = std::min(beam_width, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      return first[a] > first[b] ||
                             (first[a] == first[b] && a < b);
                    });
  std::vector<Token> extended(global_ctx.begin(), global_ctx.end());
  extended.push_back(0);
  std::vector<double> mix(first.size(), 0.0);
  double mass = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = first[order[i]];
    if (w <= 0.0) continue;
    extended.back() = static_cast<Token>(order[i]);
    const CategoricalDist next = helper.next_dist(extended);
    for (std::size_t j = 0; j < mix.size(); ++j) mix[j] += w * next[j];
    mass += w;
  }
  if (mass <= 0.0) throw Error("beam has no probability mass");
  return CategoricalDist::from_weights(std::move(mix));
}

CategoricalDist interp_linear(const CategoricalDist& p_local,
                              const CategoricalDist& p_global, double lambda) {
  check_lambda(lambda, "lambda");
  check_same_size(p_local, p_global);
  if (lambda == 1.0) return p_local;
  if (lambda == 0.0) return p_global;
  std::vector<double> out(p_local.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = lambda * p_local[i] + (1.0 - lambda) * p_global[i];
  }
  return CategoricalDist::from_weights(std::move(out));
}

CategoricalDist interp_loglinear(const CategoricalDist& p_local,
                                 const CategoricalDist& p_global,
                                 double lambda1, double lambda2,
                                 double floor) {
  check_lambda(lambda1, "lambda1");
  check_lambda(lambda2, "lambda2");
  check_same_size(p_local, p_global);
  if (lambda1 == 0.0 && lambda2 == 1.0) return p_local;
  if (lambda2 == 0.0 && lambda1 == 1.0) return p_global;
  const std::size_t n = p_local.size();
  std::vector<double> logp(n, 0.0);
  auto add = [&](const CategoricalDist& p, double w) {
    if (w == 0.0) return;
    for (std::size_t i = 0; i < n; ++i) {
      logp[i] += w * std::log(std::max(p[i], floor));
    }
  };
  add(p_global, lambda1);
  add(p_local, lambda2);
  const double mx = *std::max_element(logp.begin(), logp.end());
  if (!std::isfinite(mx)) throw Error("log-linear interpolation has no mass");
  for (double& v : logp) v = std::exp(v - mx);
  return CategoricalDist::from_weights(std::move(logp));
}

CategoricalDist evaluate(const Hypothesis& h, const Context& ctx,
                         const Sources& src) {
  switch (h.kind) {
    case Kind::unigram:
      if (!src.counts) throw Error("unigram hypothesis needs counts");
      return hyp_unigram(*src.counts);
    case Kind::local:
      return hyp_local(ctx, h.local_source, src);
    case Kind::global:
      return hyp_global(ctx, h.global_source, src, h.beam_width);
    case Kind::ignore:
      return hyp_ignore(need(src.lm, "the evaluated model"), ctx);
    case Kind::restart:
      return need(src.restart_lm, "a restart model").next_dist(ctx.full_context());
    case Kind::interp_linear:
      return interp_linear(hyp_local(ctx, h.local_source, src),
                           hyp_global(ctx, h.global_source, src, h.beam_width),
                           h.params.lambda);
    case Kind::interp_loglinear:
      return interp_loglinear(
          hyp_local(ctx, h.local_source, src),
          hyp_global(ctx, h.global_source, src, h.beam_width),
          h.params.lambda1, h.params.lambda2);
  }
  throw Error("unknown hypothesis kind");
}

double default_grid_step(Family family, TieMode tie_mode) {
  return family == Family::loglinear && tie_mode == TieMode::free ? 0.05
                                                                   : 0.01;
}

FitResult fit_lambda(Family family, std::span<const CategoricalDist> local,
                     std::span<const CategoricalDist> global,
                     std::span<const CategoricalDist> targets,
                     double grid_step, TieMode tie_mode) {
  if (targets.empty()) throw Error("fit_lambda needs at least one context");
  if (local.size() != targets.size() || global.size() != targets.size()) {
    throw Error("fit_lambda inputs differ in length");
  }
  if (!(grid_step > 0.0 && grid_step <= 1.0)) {
    throw Error("grid step must be in (0, 1]");
  }
  const auto steps = static_cast<std::size_t>(std::llround(1.0 / grid_step));
  if (std::abs(static_cast<double>(steps) * grid_step - 1.0) > 1e-9) {
    throw Error("grid step must divide 1");
  }
  auto at = [&](std::size_t i) {
    return static_cast<double>(i) / static_cast<double>(steps);
  };
  auto mean_error = [&](auto&& make) {
    double sum = 0.0;
    for (std::size_t c = 0; c < targets.size(); ++c) {
      sum += eval::tv_distance(make(local[c], global[c]), targets[c]);
    }
    return sum / static_cast<double>(targets.size());
  };

  FitResult best;
  best.error = std::numeric_limits<double>::infinity();
  auto consider = [&](InterpolationParams p, double a, double b, double err) {
    best.grid.push_back({a, b, err});
    if (err < best.error) {
      best.error = err;
      best.params = p;
    }
  };

  if (family == Family::linear) {
    for (std::size_t i = 0; i <= steps; ++i) {
      InterpolationParams p;
      p.lambda = at(i);
      const double err = mean_error([&](const auto& l, const auto& g) {
        return interp_linear(l, g, p.lambda);
      });
      consider(p, p.lambda, 0.0, err);
    }
  } else if (tie_mode == TieMode::complementary) {
    for (std::size_t i = 0; i <= steps; ++i) {
      InterpolationParams p = InterpolationParams::complementary(at(i));
      p.lambda2 = at(steps - i);
      const double err = mean_error([&](const auto& l, const auto& g) {
        return interp_loglinear(l, g, p.lambda1, p.lambda2);
      });
      consider(p, p.lambda1, p.lambda2, err);
    }
  } else {
    for (std::size_t i = 0; i <= steps; ++i) {
      for (std::size_t j = 0; j <= steps; ++j) {
        InterpolationParams p;
        p.tie_mode = TieMode::free;
        p.lambda1 = at(i);
        p.lambda2 = at(j);
        const double err = mean_error([&](const auto& l, const auto& g) {
          return interp_loglinear(l, g, p.lambda1, p.lambda2);
        });
        consider(p, p.lambda1, p.lambda2, err);
      }
    }
  }
  return best;
}

nlohmann::json to_json(const InterpolationParams& p) {
  return {{"lambda", p.lambda},
          {"lambda1", p.lambda1},
          {"lambda2", p.lambda2},
          {"tie_mode", to_string(p.tie_mode)}};
}

InterpolationParams interpolation_params_from_json(const nlohmann::json& j) {
  InterpolationParams p;
  p.tie_mode = tie_mode_from_string(j.value("tie_mode", "complementary"));
  p.lambda = j.value("lambda", p.lambda);
  p.lambda1 = j.value("lambda1", p.lambda1);
  p.lambda2 = p.tie_mode == TieMode::complementary
                  ? 1.0 - p.lambda1
                  : j.value("lambda2", p.lambda2);
  if (p.tie_mode == TieMode::complementary && j.contains("lambda2") &&
      std::abs(j.at("lambda2").get<double>() - p.lambda2) > 1e-12) {
    throw Error("complementary tie requires lambda2 = 1 - lambda1");
  }
  p.validate();
  return p;
}

nlohmann::json to_json(const Hypothesis& h) {
  return {{"kind", to_string(h.kind)},
          {"local_source", to_string(h.local_source)},
          {"global_source", to_string(h.global_source)},
          {"params", to_json(h.params)},
          {"fit", h.fit},
          {"beam_width", h.beam_width},
          {"label", h.name()}};
}

Hypothesis hypothesis_from_json(const nlohmann::json& j) {
  static const char* const kKeys[] = {"kind",   "local_source", "global_source",
                                      "source", "params",       "fit",
                                      "beam_width", "label"};
  if (!j.is_object()) throw Error("hypothesis must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) {
          return key == k;
        }) == std::end(kKeys)) {
      throw Error("hypothesis: unknown key '" + key + "'");
    }
  }
  Hypothesis h;
  h.kind = kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("source")) {
    // Shorthand for single-source kinds.
    const Source s = source_from_string(j.at("source").get<std::string>());
    if (h.kind == Kind::global) {
      h.global_source = s;
    } else {
      h.local_source = s;
    }
  }
  if (j.contains("local_source")) {
    h.local_source = source_from_string(j.at("local_source").get<std::string>());
  }
  if (j.contains("global_source")) {
    h.global_source =
        source_from_string(j.at("global_source").get<std::string>());
  }
  if (j.contains("params")) h.params = interpolation_params_from_json(j.at("params"));
  h.fit = j.value("fit", false);
  h.beam_width = j.value("beam_width", kDefaultBeamWidth);
  h.label = j.value("label", std::string());
  h.validate();
  return h;
}

}  // namespace locglob::hypotheses
