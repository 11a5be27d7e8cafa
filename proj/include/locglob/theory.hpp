// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// Regularized log-linear models over (global, local) indicator features and
// numeric checks of how their predictions in unseen combinations relate to
// the product of single-source models.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "locglob/common.hpp"

namespace locglob::theory {

enum class FeatureKind { global, local, conjunction };
enum class FeatureSubset { full, global_only, local_only };

struct FeatureKey {
  FeatureKind kind;
  std::size_t global_value = 0;  // unused for local features
  std::size_t local_value = 0;   // unused for global features

  auto operator<=>(const FeatureKey&) const = default;
  std::string to_string() const;
};

/// Column layout of the indicator features. Conjunctions exist only for
/// (g, l) pairs observed in training.
class FeatureSpec {
 public:
  FeatureSpec(std::size_t num_global, std::size_t num_local,
              std::span<const std::pair<std::size_t, std::size_t>> seen_pairs,
              FeatureSubset subset);

  std::size_t num_global() const { return num_global_; }
  std::size_t num_local() const { return num_local_; }
  std::size_t num_features() const { return keys_.size(); }
  FeatureSubset subset() const { return subset_; }
  const std::vector<FeatureKey>& keys() const { return keys_; }
  std::optional<std::size_t> index(const FeatureKey& key) const;
  bool seen(std::size_t g, std::size_t l) const;

  /// Active columns for (g, l), in increasing order.
  std::vector<std::size_t> active(std::size_t g, std::size_t l) const;

 private:
  std::size_t num_global_;
  std::size_t num_local_;
  FeatureSubset subset_;
  std::vector<FeatureKey> keys_;
  std::map<FeatureKey, std::size_t> index_;
};

/// Dense 0/1 feature vector.
std::vector<std::uint8_t> featurize(const FeatureSpec& spec, std::size_t g,
                                    std::size_t l);

struct Sample {
  std::size_t g;
  std::size_t l;
  std::size_t y;
};

struct Dataset {
  std::size_t num_global = 0;
  std::size_t num_local = 0;
  std::size_t num_classes = 0;
  std::vector<Sample> samples;

  void validate() const;
  std::vector<std::pair<std::size_t, std::size_t>> seen_pairs() const;
};

/// Samples grouped by (g, l) with per-class counts.
struct Cell {
  std::size_t g;
  std::size_t l;
  std::vector<double> counts;  // per class
  double total = 0.0;
};
std::vector<Cell> aggregate(const Dataset& data);

struct TrainOptions {
  double tolerance = 1e-8;  // on the gradient infinity norm
  std::size_t max_iterations = 1000000;
  std::size_t history = 20;  // L-BFGS memory
};

struct TrainStats {
  std::size_t iterations = 0;
  double grad_norm = 0.0;
  double objective = 0.0;
};

class NonConvergenceError : public Error {
 public:
  using Error::Error;
};

struct LogLinearModel {
  FeatureSpec spec;
  std::size_t num_classes = 0;
  double reg_lambda = 1.0;
  Eigen::MatrixXd theta;  // num_classes x num_features
  TrainStats stats;

  std::vector<double> predict(std::size_t g, std::size_t l) const;
  double weight(std::size_t y, const FeatureKey& key) const;
};

/// -sum log p(y | x) + reg_lambda * ||theta||^2 over the cells.
double objective(const FeatureSpec& spec, std::span<const Cell> cells,
                 const Eigen::MatrixXd& theta, double reg_lambda,
                 Eigen::MatrixXd* gradient = nullptr);

/// Minimizes the objective from theta = 0 with L-BFGS and a backtracking
/// line search until the gradient infinity norm drops below the tolerance.
LogLinearModel train_loglinear(const Dataset& data, FeatureSubset subset,
                               double reg_lambda,
                               const TrainOptions& options = {});

/// Max relative error between the analytic gradient at `theta` and central
/// differences.
double grad_check_loglinear(const FeatureSpec& spec, const Dataset& data,
                            const Eigen::MatrixXd& theta, double reg_lambda,
                            double step = 1e-5);

struct EpsilonReport {
  std::vector<FeatureKey> shared;
  /// Sum over training samples with the feature active of the L1 distance
  /// between the two models' predictions.
  std::vector<double> sum;
  /// Largest single-sample L1 distance among those samples.
  std::vector<double> per_context_max;

  double epsilon(const FeatureKey& key, bool per_context = false) const;
};

EpsilonReport measure_epsilon(const LogLinearModel& a, const LogLinearModel& b,
                              const Dataset& data);

enum class Mutation {
  none,
  /// Bound exponent halved: e^{2 eps / lambda} - 1.
  half_exponent,
  /// Per-sample maximum in place of the per-feature sum.
  per_context_epsilon
};
std::string to_string(Mutation m);
Mutation mutation_from_string(const std::string& s);

struct LemmaViolation {
  std::size_t y;
  FeatureKey feature;
  double delta;
  double bound;
};

struct LemmaReport {
  double reg_lambda = 0.0;
  double slack = 0.0;
  std::size_t num_checked = 0;
  double min_margin = 0.0;  // bound - |delta|, smallest over pairs
  double max_ratio = 0.0;   // |delta| / bound, largest over pairs
  std::vector<LemmaViolation> violations;

  bool pass() const { return violations.empty(); }
  std::string describe_failure() const;
};

/// Checks |theta_a[y, i] - theta_b[y, i]| <= eps_i / lambda + slack for every
/// class and shared feature; slack = 2 * tolerance / lambda.
LemmaReport verify_lemma(const LogLinearModel& a, const LogLinearModel& b,
                         const Dataset& data, double tolerance,
                         Mutation mutation = Mutation::none);

/// Bound on |p - p_product| for an epsilon over lambda ratio; +inf when the
/// exponential overflows.
double proposition_bound(double epsilon, double reg_lambda,
                         double exponent_scale = 4.0);

struct SyntheticTask {
  Dataset data;
  /// (g, l) pairs never observed together in `data`.
  std::vector<std::pair<std::size_t, std::size_t>> surprising;
};

struct TaskOptions {
  std::size_t num_global = 20;
  std::size_t num_local = 20;
  std::size_t num_classes = 10;
  std::size_t num_samples = 5000;
  double pair_density = 0.5;  // fraction of (g, l) pairs with support
  double logit_scale = 1.5;
};

SyntheticTask make_synthetic_task(const TaskOptions& options,
                                  std::uint64_t seed);
/// y = g = l: both sources carry the same information.
SyntheticTask make_copy_task(std::size_t n, std::size_t samples_per_value);

struct PairCheck {
  std::size_t g;
  std::size_t l;
  double epsilon;
  double bound;
  double max_deviation;
};

struct PropositionReport {
  double reg_lambda = 0.0;
  double epsilon = 0.0;            // max per-feature sum over involved features
  double epsilon_per_context = 0.0;  // same, per-sample-max variant
  double bound = 0.0;              // for the global epsilon, may be +inf
  double bound_exponent = 0.0;     // 4 eps / lambda
  double max_deviation = 0.0;
  std::vector<PairCheck> pairs;
  LemmaReport lemma_global;  // full vs global-only
  LemmaReport lemma_local;   // full vs local-only
  std::vector<std::string> failures;
  TrainStats full_stats, global_stats, local_stats;

  /// Violations the same trained models produce under each deliberately
  /// wrong check (self-test).
  struct MutationOutcome {
    Mutation mutation;
    std::size_t violations;
  };
  std::vector<MutationOutcome> mutations;

  bool pass() const { return failures.empty(); }
};

/// Trains full, global-only and local-only models and checks, for every
/// surprising pair and class, that the full model's prediction is within the
/// bound of the renormalized product of the single-source predictions.
/// Every Mutation is also evaluated and recorded.
PropositionReport verify_proposition(const SyntheticTask& task,
                                     double reg_lambda,
                                     const TrainOptions& options = {});

/// Renormalized elementwise product.
std::vector<double> product_of_experts(std::span<const double> p_global,
                                       std::span<const double> p_local);

struct SweepOptions {
  std::vector<double> lambdas{0.01, 0.1, 1.0, 10.0};
  std::size_t num_tasks = 20;
  TaskOptions task;
  TrainOptions train;
  std::uint64_t seed = 0;
};

struct Trial {
  std::size_t task_index;
  std::uint64_t task_seed;
  PropositionReport report;
};

struct SweepReport {
  SweepOptions options;
  std::vector<Trial> trials;

  std::size_t num_failed() const;
  /// Trials in which the mutated check reports at least one violation.
  std::size_t num_detected(Mutation m) const;
};

SweepReport run_sweep(const SweepOptions& options);

/// Required: lambdas, num_tasks. Optional: seed, task {num_global,
/// num_local, num_classes, num_samples, pair_density, logit_scale}, train
/// {tolerance, max_iterations, history}. Errors name the offending field.
SweepOptions sweep_options_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SweepOptions& options);

/// Per-trial {lambda, epsilon, bound, max_deviation, pass} records.
nlohmann::json to_json(const SweepReport& report);
std::string to_csv(const SweepReport& report);
nlohmann::json to_json(const PropositionReport& report);

}  // namespace locglob::theory
