// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// Candidate predictors for what a model does in a surprising context, and
// grid fitting of interpolation weights.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "locglob/automata.hpp"
#include "locglob/common.hpp"
#include "locglob/corpus.hpp"

namespace locglob::hypotheses {

enum class Kind {
  unigram,
  local,
  global,
  ignore,
  interp_linear,
  interp_loglinear,
  restart
};
enum class Source { dfa_exact, bigram_counts, beam_lm, lm };
enum class TieMode { free, complementary };
enum class Family { linear, loglinear };

std::string to_string(Kind k);
std::string to_string(Source s);
std::string to_string(TieMode t);
Kind kind_from_string(const std::string& s);
Source source_from_string(const std::string& s);
TieMode tie_mode_from_string(const std::string& s);

inline constexpr double kLogFloor = 1e-10;
inline constexpr std::size_t kDefaultBeamWidth = 15;

struct InterpolationParams {
  double lambda = 0.5;   // linear weight on the local estimate
  double lambda1 = 0.5;  // log-linear exponent on the global estimate
  double lambda2 = 0.5;  // log-linear exponent on the local estimate
  TieMode tie_mode = TieMode::complementary;

  /// Checks ranges; in complementary mode also lambda2 == 1 - lambda1.
  void validate() const;
  static InterpolationParams complementary(double lambda1);
  bool operator==(const InterpolationParams&) const = default;
};

struct Hypothesis {
  Kind kind = Kind::unigram;
  Source local_source = Source::dfa_exact;   // local and interpolations
  Source global_source = Source::dfa_exact;  // global and interpolations
  InterpolationParams params;
  /// Interpolations only: fit params on the evaluation contexts instead of
  /// using `params`.
  bool fit = false;
  std::size_t beam_width = kDefaultBeamWidth;
  /// Row label in reports; derived from the fields when empty.
  std::string label;

  std::string name() const;
  void validate() const;
};

/// Everything a hypothesis may draw on. Unused members may stay null.
struct Sources {
  const automata::Dfa* dfa = nullptr;
  std::span<const double> occupancy;  // optional cache for dfa_exact local
  const corpus::CountTable* counts = nullptr;
  const NextTokenModel* helper_lm = nullptr;   // beam_lm global estimates
  const NextTokenModel* restart_lm = nullptr;  // restart hypothesis
  const NextTokenModel* lm = nullptr;          // model under evaluation
};

using Context = automata::SurprisingContext;

CategoricalDist hyp_local(const Context& ctx, Source source,
                          const Sources& src);
CategoricalDist hyp_global(const Context& ctx, Source source,
                           const Sources& src,
                           std::size_t beam_width = kDefaultBeamWidth);
CategoricalDist hyp_unigram(const corpus::CountTable& counts);
CategoricalDist hyp_ignore(const NextTokenModel& lm, const Context& ctx);

/// One step of beam search: mixes p(. | X_G v) over the beam_width most
/// likely non-EOS continuations v, weighted by p(v | X_G) and renormalized.
CategoricalDist beam_global(const NextTokenModel& helper,
                            std::span<const Token> global_ctx,
                            std::size_t beam_width);

CategoricalDist interp_linear(const CategoricalDist& p_local,
                              const CategoricalDist& p_global, double lambda);
/// Renormalized p_global^lambda1 * p_local^lambda2 with probabilities
/// clamped below at `floor`. A factor with exponent 0 is left out and a lone
/// factor with exponent 1 is returned as is.
CategoricalDist interp_loglinear(const CategoricalDist& p_local,
                                 const CategoricalDist& p_global,
                                 double lambda1, double lambda2,
                                 double floor = kLogFloor);

/// Evaluates any hypothesis with fixed params.
CategoricalDist evaluate(const Hypothesis& h, const Context& ctx,
                         const Sources& src);

struct GridPoint {
  double lambda1;  // lambda for linear
  double lambda2;  // unused for linear
  double error;
};

struct FitResult {
  InterpolationParams params;
  double error = 0.0;  // mean TV to the targets
  std::vector<GridPoint> grid;
};

/// Exhaustive grid search minimizing mean TV between the interpolation and
/// `targets`. The grid is {0, step, ..., 1}; free log-linear search is 2-D.
/// Ties go to the smaller lambda, then the smaller lambda2.
FitResult fit_lambda(Family family, std::span<const CategoricalDist> local,
                     std::span<const CategoricalDist> global,
                     std::span<const CategoricalDist> targets,
                     double grid_step, TieMode tie_mode);

/// Grid steps used when none is given: 0.01 for 1-D, 0.05 for 2-D searches.
double default_grid_step(Family family, TieMode tie_mode);

nlohmann::json to_json(const InterpolationParams& p);
InterpolationParams interpolation_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Hypothesis& h);
Hypothesis hypothesis_from_json(const nlohmann::json& j);

}  // namespace locglob::hypotheses
