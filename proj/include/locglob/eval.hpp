// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// Distances between next-token distributions and the multi-hypothesis
// evaluation harness.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "locglob/common.hpp"
#include "locglob/hypotheses.hpp"

namespace locglob::eval {

/// Half the L1 distance. Throws on mismatched supports.
double tv_distance(const CategoricalDist& p, const CategoricalDist& q);
/// Jensen-Shannon divergence in bits.
double jsd(const CategoricalDist& p, const CategoricalDist& q);

enum class Metric { tv, jsd };
std::string to_string(Metric m);
Metric metric_from_string(const std::string& s);
double distance(Metric m, const CategoricalDist& p, const CategoricalDist& q);

/// Mean distance between hypothesis outputs and model predictions.
double err(std::span<const CategoricalDist> hypothesis,
           std::span<const CategoricalDist> model, Metric m = Metric::tv);
inline double acc_from_err(double e) { return 1.0 - e; }

double mean(std::span<const double> xs);
/// Sample standard deviation; 0 for fewer than two values.
double sample_std(std::span<const double> xs);

/// One evaluated model and its independently initialized twin.
struct SeedModels {
  std::uint64_t seed = 0;
  const NextTokenModel* lm = nullptr;
  const NextTokenModel* restart_lm = nullptr;
};

struct SuiteInput {
  std::vector<hypotheses::Hypothesis> hypotheses;
  std::span<const automata::SurprisingContext> contexts;
  /// Seed-independent sources (automaton, counts, helper model).
  hypotheses::Sources shared;
  std::vector<SeedModels> seeds;
  Metric metric = Metric::tv;
  nlohmann::json metadata = nlohmann::json::object();
};

struct HypothesisRow {
  std::string name;
  nlohmann::json spec;
  std::vector<double> acc;                      // per seed
  std::vector<std::vector<double>> distances;   // per seed, per context
  std::vector<hypotheses::InterpolationParams> fitted;  // per seed, if fit
  std::vector<std::vector<hypotheses::GridPoint>> grids;  // per seed, if fit
  double mean_acc = 0.0;
  double std_acc = 0.0;
  std::string error;  // non-empty when the row could not be evaluated

  bool ok() const { return error.empty(); }
};

struct HypothesisReport {
  nlohmann::json metadata;
  std::vector<std::uint64_t> seeds;
  std::size_t num_contexts = 0;
  std::string metric = "tv";
  std::vector<HypothesisRow> rows;

  /// Row by name; throws if absent.
  const HypothesisRow& row(const std::string& name) const;
  const HypothesisRow* find(const std::string& name) const;
  bool complete() const;
};

/// Contexts are shared by every hypothesis and seed. A hypothesis that fails
/// is kept as a row carrying the error.
HypothesisReport evaluate_suite(const SuiteInput& input);

/// Hypotheses compared on automaton languages: unigram, exact local and
/// global, ignore, fitted linear and log-linear interpolations (both tie
/// modes), restart.
std::vector<hypotheses::Hypothesis> standard_regular_suite();
/// Counterpart for corpora: bigram local, beam global.
std::vector<hypotheses::Hypothesis> standard_natural_suite();

/// Recomputes every acc, mean and std from the stored distances; returns a
/// description of the first mismatch or an empty string.
std::string check_consistency(const HypothesisReport& report,
                              double tolerance = 1e-12);

/// Number of discordant pairs between the hypothesis orderings (by mean acc)
/// of two reports over the same rows.
std::size_t ranking_discordance(const HypothesisReport& a,
                                const HypothesisReport& b);

nlohmann::json to_json(const HypothesisReport& report);
HypothesisReport report_from_json(const nlohmann::json& j);
/// Flat rows: language, arch, noise, hypothesis, seed, acc.
std::string to_csv(const HypothesisReport& report);

}  // namespace locglob::eval
