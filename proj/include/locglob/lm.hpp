// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// Small GRU and decoder-only transformer language models trained from
// scratch with hand-derived gradients and Adam.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "locglob/common.hpp"
#include "locglob/rng.hpp"

namespace locglob::lm {

enum class Arch { gru, transformer };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& s);

/// `vocab_size` counts real tokens; models predict vocab_size + 1 outcomes
/// (EOS last), and the EOS id doubles as the beginning-of-sequence input.
struct LmConfig {
  Arch arch = Arch::gru;
  std::size_t vocab_size = 128;
  std::size_t embed_dim = 128;  // GRU only; transformers use hidden_dim
  std::size_t hidden_dim = 256;
  std::size_t num_layers = 1;
  std::size_t num_heads = 4;  // transformer only
  std::size_t max_seq_len = 128;

  static LmConfig gru_default(std::size_t vocab_size);
  static LmConfig transformer_default(std::size_t vocab_size);
  void validate() const;
  std::size_t output_size() const { return vocab_size + 1; }
  bool operator==(const LmConfig&) const = default;
};

struct NoiseConfig {
  double token_swap_prob = 0.0;
  double state_dropout_prob = 0.0;

  void validate() const;
  bool operator==(const NoiseConfig&) const = default;
};

struct TrainConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Linearly anneal the learning rate to zero over the planned steps.
  bool linear_decay = true;
  /// Sequences presented in total, cycling through reshuffled epochs.
  /// 0 means `epochs` full passes instead.
  std::size_t num_examples = 128000;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  std::size_t max_steps = 0;  // 0: unlimited
  std::uint64_t seed = 0;
  NoiseConfig noise;

  void validate() const;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::string corpus_hash;
  NoiseConfig noise;
  nlohmann::json train_config;
  std::size_t steps = 0;
  double final_loss = 0.0;
  std::vector<double> loss_history;  // mean batch loss per step
};

class ModelImpl;  // float network, defined in the implementation

struct ParamRef {
  std::string name;
  Eigen::MatrixXf* value;
};

/// A trained next-token model. Inference is deterministic and noiseless.
class TrainedLm : public NextTokenModel {
 public:
  /// Freshly initialized network (uniform ±1/sqrt(fan_in)).
  TrainedLm(const LmConfig& config, std::uint64_t init_seed);
  ~TrainedLm() override;
  TrainedLm(TrainedLm&&) noexcept;
  TrainedLm& operator=(TrainedLm&&) noexcept;

  const LmConfig& config() const { return config_; }
  const Provenance& provenance() const { return provenance_; }
  Provenance& provenance() { return provenance_; }

  std::size_t output_size() const override { return config_.output_size(); }
  CategoricalDist next_dist(std::span<const Token> context) const override;
  std::vector<CategoricalDist> prefix_dists(
      std::span<const Token> context) const override;

  /// Mean per-token cross-entropy on complete sequences (EOS included).
  double mean_loss(std::span<const TokenSeq> corpus) const;

  std::vector<ParamRef> parameters();
  std::size_t num_parameters() const;

  void save(const std::filesystem::path& path) const;
  static TrainedLm load(const std::filesystem::path& path);

  ModelImpl& impl() { return *impl_; }

 private:
  LmConfig config_;
  Provenance provenance_;
  std::unique_ptr<ModelImpl> impl_;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Minimizes mean next-token cross-entropy with Adam. Same inputs and seed
/// give byte-identical parameters.
TrainedLm train_lm(std::span<const TokenSeq> corpus, const LmConfig& lm_config,
                   const TrainConfig& train_config,
                   const StepCallback& on_step = {});

// --- noise --------------------------------------------------------------------

/// Replaces each token independently with probability p_tok by a draw from
/// `unigram` (whose support must be the real tokens).
TokenSeq apply_token_noise(const TokenSeq& seq, double p_tok,
                           const CategoricalDist& unigram, Rng& rng);

/// Inverted dropout: zero with probability p_drop, scale survivors by
/// 1/(1 - p_drop). p_drop == 1 is rejected.
void state_dropout(Eigen::Ref<Eigen::MatrixXf> features, double p_drop,
                   Rng& rng);
void state_dropout(Eigen::Ref<Eigen::MatrixXd> features, double p_drop,
                   Rng& rng);

// --- gradient check -------------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t num_checked = 0;
  /// Largest |analytic gradient| among embedding columns of tokens that never
  /// occur as input.
  double unused_embedding_grad = 0.0;
};

/// Compares analytic gradients of the mean loss with central differences
/// (double precision). Dropout masks are replayed identically for every
/// evaluation when noise.state_dropout_prob > 0.
GradCheckResult grad_check_lm(const LmConfig& config,
                              std::span<const TokenSeq> batch,
                              std::uint64_t seed, double step = 1e-4,
                              const NoiseConfig& noise = {});

nlohmann::json to_json(const LmConfig& c);
LmConfig lm_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NoiseConfig& c);
NoiseConfig noise_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace locglob::lm
