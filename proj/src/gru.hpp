// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "lm_nets.hpp"

namespace locglob::lm::detail {

template <typename S>
class GruNetwork final : public Network<S> {
 public:
  GruNetwork(const LmConfig& config, Rng& rng);

  double forward_backward(std::span<const Example> batch, double p_drop,
                          Rng* rng, bool backward) override;
  Mat<S> logits(std::span<const Token> input) const override;

 private:
  // Sequences sorted longest first; step t holds the width[t] sequences
  // still running, in columns offset[t] .. offset[t] + width[t].
  struct Packing {
    std::vector<Eigen::Index> offset;
    std::vector<Eigen::Index> width;

    Eigen::Index steps() const { return static_cast<Eigen::Index>(width.size()); }
    Eigen::Index columns() const {
      return width.empty() ? 0 : offset.back() + width.back();
    }
    static Packing from(const std::vector<std::vector<Token>>& sorted) {
      Packing p;
      const std::size_t steps = sorted.empty() ? 0 : sorted.front().size();
      Eigen::Index off = 0;
      for (std::size_t t = 0; t < steps; ++t) {
        Eigen::Index w = 0;
        while (static_cast<std::size_t>(w) < sorted.size() &&
               sorted[static_cast<std::size_t>(w)].size() > t) {
          ++w;
        }
        p.offset.push_back(off);
        p.width.push_back(w);
        off += w;
      }
      return p;
    }
  };

  // Per-layer activations in packed column order.
  struct LayerCache {
    Mat<S> x;      // layer input
    Mat<S> r, z, n;
    Mat<S> ghn;    // W_hn h + b_hn
    Mat<S> hprev;  // carried state entering the step
    Mat<S> mask;   // dropout mask (empty without dropout)
    Mat<S> hout;   // carried state leaving the step
  };

  void forward(const std::vector<std::vector<Token>>& inputs,
               const Packing& pack, double p_drop, Rng* rng,
               std::vector<LayerCache>& caches) const;

  static std::size_t w_i(std::size_t l) { return 1 + 4 * l; }
  static std::size_t w_h(std::size_t l) { return 2 + 4 * l; }
  static std::size_t b_i(std::size_t l) { return 3 + 4 * l; }
  static std::size_t b_h(std::size_t l) { return 4 + 4 * l; }
  std::size_t out_w() const { return 1 + 4 * cfg_.num_layers; }
  std::size_t out_b() const { return 2 + 4 * cfg_.num_layers; }

  LmConfig cfg_;
};

}  // namespace locglob::lm::detail
