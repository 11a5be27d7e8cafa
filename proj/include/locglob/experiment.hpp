// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end experiments: language generation, model training, surprising
// contexts, hypothesis evaluation, reports and figures. Every artifact is
// cached on disk next to a manifest describing how it was produced.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "locglob/automata.hpp"
#include "locglob/corpus.hpp"
#include "locglob/eval.hpp"
#include "locglob/hypotheses.hpp"
#include "locglob/lm.hpp"

namespace locglob::experiment {

inline constexpr const char* kCodeVersion = "locglob-0.1.0";
inline constexpr const char* kOutputRootEnv = "LOCGLOB_OUTPUT_ROOT";

/// Schema violation; the message starts with the offending field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class LanguageType { dfa, corpus };

struct LanguageSpec {
  std::string id;
  LanguageType type = LanguageType::dfa;
  automata::DfaConfig dfa;  // the seed is derived, not read
  std::size_t num_train = 128000;
  std::size_t num_val = 1000;
  std::size_t max_walk_len = automata::kDefaultMaxWalkLength;
  std::filesystem::path train_path;  // corpus languages
  std::filesystem::path val_path;    // optional; else the last num_val lines
  std::size_t vocab_size = 0;        // corpus: 0 infers from the file
};

enum class NoiseKind { none, token_swap, state_dropout };
std::string to_string(NoiseKind k);
NoiseKind noise_kind_from_string(const std::string& s);

struct NoiseSetting {
  NoiseKind kind = NoiseKind::none;
  double p = 0.0;

  /// "none", "token_swap-0.1", ...
  std::string id() const;
  lm::NoiseConfig config() const;
  bool operator==(const NoiseSetting&) const = default;
};

struct ModelSpec {
  std::string id;
  lm::LmConfig config;
  std::optional<lm::TrainConfig> train;  // overrides the experiment default
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::vector<NoiseSetting>> noise;  // subset of the sweep
};

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<LanguageSpec> languages;
  std::vector<ModelSpec> models;
  lm::TrainConfig train;
  std::vector<NoiseSetting> noise{NoiseSetting{}};
  /// Empty means the standard suite for each language type.
  std::vector<hypotheses::Hypothesis> hypotheses;
  bool standard_hypotheses = false;
  std::size_t num_contexts = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  corpus::NaturalContextOptions natural;
  std::string helper_model;  // model id for beam estimates; default first
  eval::Metric metric = eval::Metric::tv;
  std::filesystem::path output_dir;

  void validate() const;
  const std::vector<std::uint64_t>& seeds_for(const ModelSpec& m) const;
  lm::TrainConfig train_for(const ModelSpec& m) const;
  const std::vector<NoiseSetting>& noise_for(const ModelSpec& m) const;
  std::vector<hypotheses::Hypothesis> hypotheses_for(
      const LanguageSpec& lang) const;
};

/// Parses and validates. Unknown keys and missing required fields raise a
/// ConfigError naming the field.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Relative paths resolve against $LOCGLOB_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output_dir(const std::filesystem::path& dir);

// --- seeds ----------------------------------------------------------------------

std::uint64_t language_seed(std::uint64_t experiment_seed, std::size_t index);
std::uint64_t dfa_seed(std::uint64_t language_seed);
std::uint64_t walk_seed(std::uint64_t language_seed, std::string_view split);
std::uint64_t context_seed(std::uint64_t language_seed);
std::uint64_t model_seed(std::uint64_t language_seed, std::uint64_t seed);
std::uint64_t helper_seed(std::uint64_t language_seed);

// --- artifacts ------------------------------------------------------------------

struct Language {
  LanguageSpec spec;
  std::uint64_t seed = 0;
  std::size_t vocab_size = 0;
  std::optional<automata::Dfa> dfa;
  std::vector<double> occupancy;
  std::vector<TokenSeq> train;
  std::vector<TokenSeq> val;
  corpus::CountTable counts;
};

/// Writes (or reuses) dfa.json, train.txt, val.txt and manifest.json under
/// `dir` and returns the loaded language.
Language prepare_language(const LanguageSpec& spec, std::uint64_t seed,
                          const std::filesystem::path& dir);

/// Trains, or loads a checkpoint whose manifest matches the request.
lm::TrainedLm train_or_load(const std::filesystem::path& path,
                            std::span<const TokenSeq> corpus,
                            const lm::LmConfig& config,
                            const lm::TrainConfig& train,
                            bool* trained = nullptr);

struct SweepPoint {
  double lambda1;
  double acc;  // mean over seeds of 1 - fit error at this grid point
};

/// Mean accuracy per grid point of the complementary log-linear row.
std::vector<SweepPoint> lambda_sweep(const eval::HypothesisReport& report);

/// Concatenates per-context distances of reports over the same seeds and
/// hypotheses, recomputing every summary.
eval::HypothesisReport pool_reports(
    std::span<const eval::HypothesisReport> reports,
    nlohmann::json metadata);

struct Progress {
  virtual ~Progress() = default;
  virtual void message(const std::string& text) = 0;
};

struct SuiteResult {
  /// Keyed by "<language>/<model>/<noise>".
  std::map<std::string, eval::HypothesisReport> reports;
  /// Keyed by "<model>/<noise>"; distances pooled over languages.
  std::map<std::string, eval::HypothesisReport> pooled;
  std::filesystem::path output_dir;
};

/// Runs every (language, model, noise) combination and writes reports, CSVs
/// and SVG figures. Models and languages already on disk are reused, so an
/// interrupted run resumes where it stopped.
SuiteResult run_suite(const ExperimentConfig& config,
                      Progress* progress = nullptr);

/// Regenerates the SVG figures from summary.json in `dir`.
void write_figures(const std::filesystem::path& dir);

}  // namespace locglob::experiment
