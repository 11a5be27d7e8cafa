// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// Network internals shared by training, inference and gradient checking.
// Templated on the scalar so the gradient check can run in double.

#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "locglob/lm.hpp"

namespace locglob::lm::detail {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <typename S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
};

/// One training sequence: input[t] predicts target[t].
struct Example {
  std::vector<Token> input;
  std::vector<Token> target;
};

/// Builds the (input, target) pair for a corpus sequence; BOS reuses the
/// EOS id. Returns false for sequences with nothing to predict.
bool make_example(const TokenSeq& seq, Token eos, Example& out);

/// Dropout mask source. Masks are drawn in a fixed order so a replayed
/// generator reproduces them exactly.
template <typename S>
void draw_dropout_mask(Mat<S>& mask, Eigen::Index rows, Eigen::Index cols,
                       double p_drop, Rng& rng) {
  mask.resize(rows, cols);
  const S keep = static_cast<S>(1.0 / (1.0 - p_drop));
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      mask(i, j) = rng.uniform() < p_drop ? S(0) : keep;
    }
  }
}

template <typename S>
class Network {
 public:
  virtual ~Network() = default;

  std::vector<Param<S>>& params() { return params_; }
  const std::vector<Param<S>>& params() const { return params_; }

  /// Mean cross-entropy over every target in the batch. With `backward`
  /// set, parameter gradients of that mean are written into Param::grad.
  /// `rng` supplies dropout masks; pass p_drop = 0 for noiseless passes.
  virtual double forward_backward(std::span<const Example> batch,
                                  double p_drop, Rng* rng, bool backward) = 0;

  /// Logits (output_size x input length) for one sequence, noiseless.
  virtual Mat<S> logits(std::span<const Token> input) const = 0;

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
  }

 protected:
  Param<S>& add_param(std::string name, Eigen::Index rows, Eigen::Index cols,
                      double fan_in, Rng& rng) {
    Param<S> p;
    p.name = std::move(name);
    p.value.resize(rows, cols);
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) {
        p.value(i, j) = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
      }
    }
    p.grad.setZero(rows, cols);
    params_.push_back(std::move(p));
    return params_.back();
  }
  Param<S>& add_constant(std::string name, Eigen::Index rows, S value) {
    Param<S> p;
    p.name = std::move(name);
    p.value.setConstant(rows, 1, value);
    p.grad.setZero(rows, 1);
    params_.push_back(std::move(p));
    return params_.back();
  }

  std::vector<Param<S>> params_;
};

template <typename S>
std::unique_ptr<Network<S>> make_network(const LmConfig& config, Rng& rng);

/// Softmax cross-entropy over columns. Writes d(mean loss)/d(logits) into
/// `dlogits` when non-null. Columns with target < 0 are ignored.
template <typename S>
double softmax_xent(const Mat<S>& logits, std::span<const int> targets,
                    std::size_t count, Mat<S>* dlogits) {
  double loss = 0.0;
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  const S inv = static_cast<S>(1.0 / static_cast<double>(count));
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const int y = targets[static_cast<std::size_t>(c)];
    if (y < 0) continue;
    const S mx = logits.col(c).maxCoeff();
    const auto e = (logits.col(c).array() - mx).exp();
    const S z = e.sum();
    loss += static_cast<double>(std::log(z) + mx - logits(y, c));
    if (dlogits) {
      dlogits->col(c) = (e / z * inv).matrix();
      (*dlogits)(y, c) -= inv;
    }
  }
  return loss / static_cast<double>(count);
}

}  // namespace locglob::lm::detail
