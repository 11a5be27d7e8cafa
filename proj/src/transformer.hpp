// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "lm_nets.hpp"

namespace locglob::lm::detail {

/// Pre-norm decoder-only transformer: sinusoidal positions, causal
/// multi-head self-attention, ReLU feed-forward of width 4 x hidden, final
/// layer norm. Dropout acts on each self-attention sublayer output.
template <typename S>
class TransformerNetwork final : public Network<S> {
 public:
  TransformerNetwork(const LmConfig& config, Rng& rng);

  double forward_backward(std::span<const Example> batch, double p_drop,
                          Rng* rng, bool backward) override;
  Mat<S> logits(std::span<const Token> input) const override;

 private:
  struct Norm {
    Mat<S> xhat;
    RowVec<S> rstd;
  };
  struct LayerCache {
    Mat<S> x;  // residual stream entering the layer
    Norm ln1;
    Mat<S> u;  // ln1 output
    Mat<S> q, k, v;
    std::vector<Mat<S>> probs;  // per (segment, head) attention weights
    Mat<S> o;                   // concatenated head outputs
    Mat<S> mask;                // dropout mask on the attention output
    Mat<S> x1;                  // after the attention residual
    Norm ln2;
    Mat<S> w;     // ln2 output
    Mat<S> hpre;  // feed-forward pre-activation
  };
  struct Cache {
    std::vector<LayerCache> layers;
    Mat<S> xl;  // final residual stream
    Norm lnf;
    Mat<S> xf;
  };
  struct Segment {
    Eigen::Index start;
    Eigen::Index length;
  };

  // Computes logits for the concatenated segments.
  Mat<S> forward(const std::vector<Token>& tokens,
                 const std::vector<Segment>& segments, double p_drop,
                 Rng* rng, Cache& cache) const;

  std::size_t layer_param(std::size_t l, std::size_t k) const {
    return 1 + 16 * l + k;
  }
  std::size_t final_param(std::size_t k) const {
    return 1 + 16 * cfg_.num_layers + k;
  }

  LmConfig cfg_;
};

}  // namespace locglob::lm::detail
