// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include "transformer.hpp"

#include <limits>

namespace locglob::lm::detail {

namespace {

enum LayerParam : std::size_t {
  kLn1G, kLn1B, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
  kLn2G, kLn2B, kW1, kB1, kW2, kB2
};
enum FinalParam : std::size_t { kLnfG, kLnfB, kOutW, kOutB };

constexpr double kLayerNormEps = 1e-5;

template <typename S>
void layer_norm(const Mat<S>& x, const Mat<S>& gamma, const Mat<S>& beta,
                Mat<S>& y, Mat<S>& xhat, RowVec<S>& rstd) {
  const RowVec<S> mean = x.colwise().mean();
  xhat = x.rowwise() - mean;
  const RowVec<S> var = xhat.array().square().colwise().mean();
  rstd = (var.array() + static_cast<S>(kLayerNormEps)).rsqrt();
  xhat.array().rowwise() *= rstd.array();
  y = (xhat.array().colwise() * gamma.col(0).array()).matrix();
  y.colwise() += beta.col(0);
}

// Accumulates dgamma/dbeta and returns d(input).
template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat,
                           const RowVec<S>& rstd, const Mat<S>& gamma,
                           Mat<S>& dgamma, Mat<S>& dbeta) {
  dgamma += (dy.array() * xhat.array()).rowwise().sum().matrix();
  dbeta += dy.rowwise().sum();
  const Mat<S> dxhat = (dy.array().colwise() * gamma.col(0).array()).matrix();
  const auto d = static_cast<S>(xhat.rows());
  const RowVec<S> sum_dxhat = dxhat.colwise().sum();
  const RowVec<S> sum_dxhat_xhat =
      (dxhat.array() * xhat.array()).colwise().sum();
  Mat<S> dx = (dxhat * d).rowwise() - sum_dxhat;
  dx.array() -= xhat.array().rowwise() * sum_dxhat_xhat.array();
  dx.array().rowwise() *= (rstd.array() / d);
  return dx;
}

template <typename S>
S positional(Eigen::Index pos, Eigen::Index dim, Eigen::Index width) {
  const double freq =
      std::pow(10000.0, -static_cast<double>(2 * (dim / 2)) /
                            static_cast<double>(width));
  const double angle = static_cast<double>(pos) * freq;
  return static_cast<S>(dim % 2 == 0 ? std::sin(angle) : std::cos(angle));
}

}  // namespace

template <typename S>
TransformerNetwork<S>::TransformerNetwork(const LmConfig& config, Rng& rng)
    : cfg_(config) {
  const auto V = static_cast<Eigen::Index>(config.output_size());
  const auto D = static_cast<Eigen::Index>(config.hidden_dim);
  const auto F = 4 * D;
  const auto fd = static_cast<double>(D);
  this->add_param("embed", D, V, 1.0, rng);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    this->add_constant(p + "ln1.g", D, S(1));
    this->add_constant(p + "ln1.b", D, S(0));
    for (const char* name : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
      this->add_param(p + name + ".w", D, D, fd, rng);
      this->add_param(p + name + ".b", D, 1, fd, rng);
    }
    this->add_constant(p + "ln2.g", D, S(1));
    this->add_constant(p + "ln2.b", D, S(0));
    this->add_param(p + "ff1.w", F, D, fd, rng);
    this->add_param(p + "ff1.b", F, 1, fd, rng);
    this->add_param(p + "ff2.w", D, F, static_cast<double>(F), rng);
    this->add_param(p + "ff2.b", D, 1, static_cast<double>(F), rng);
  }
  this->add_constant("lnf.g", D, S(1));
  this->add_constant("lnf.b", D, S(0));
  this->add_param("out.w", V, D, fd, rng);
  this->add_param("out.b", V, 1, fd, rng);
}

template <typename S>
Mat<S> TransformerNetwork<S>::forward(const std::vector<Token>& tokens,
                                      const std::vector<Segment>& segments,
                                      double p_drop, Rng* rng,
                                      Cache& cache) const {
  const auto& P = this->params_;
  const auto D = static_cast<Eigen::Index>(cfg_.hidden_dim);
  const auto heads = static_cast<Eigen::Index>(cfg_.num_heads);
  const Eigen::Index dh = D / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  const auto N = static_cast<Eigen::Index>(tokens.size());

  Mat<S> x(D, N);
  for (const auto& seg : segments) {
    for (Eigen::Index i = 0; i < seg.length; ++i) {
      const Eigen::Index c = seg.start + i;
      x.col(c) = P[0].value.col(tokens[static_cast<std::size_t>(c)]);
      for (Eigen::Index d = 0; d < D; ++d) x(d, c) += positional<S>(i, d, D);
    }
  }

  cache.layers.resize(cfg_.num_layers);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    auto& c = cache.layers[l];
    auto W = [&](std::size_t k) -> const Mat<S>& {
      return P[layer_param(l, k)].value;
    };
    c.x = x;
    layer_norm<S>(c.x, W(kLn1G), W(kLn1B), c.u, c.ln1.xhat, c.ln1.rstd);
    c.q.noalias() = W(kWq) * c.u;
    c.q.colwise() += W(kBq).col(0);
    c.k.noalias() = W(kWk) * c.u;
    c.k.colwise() += W(kBk).col(0);
    c.v.noalias() = W(kWv) * c.u;
    c.v.colwise() += W(kBv).col(0);

    c.o.resize(D, N);
    c.probs.clear();
    for (const auto& seg : segments) {
      const Eigen::Index T = seg.length;
      for (Eigen::Index h = 0; h < heads; ++h) {
        const auto qh = c.q.block(h * dh, seg.start, dh, T);
        const auto kh = c.k.block(h * dh, seg.start, dh, T);
        const auto vh = c.v.block(h * dh, seg.start, dh, T);
        Mat<S> s = (qh.transpose() * kh) * scale;  // s(i, j): query i, key j
        for (Eigen::Index i = 0; i < T; ++i) {
          const S mx = s.row(i).head(i + 1).maxCoeff();
          S z = 0;
          for (Eigen::Index j = 0; j <= i; ++j) {
            s(i, j) = std::exp(s(i, j) - mx);
            z += s(i, j);
          }
          s.row(i).head(i + 1) /= z;
          s.row(i).tail(T - i - 1).setZero();
        }
        c.o.block(h * dh, seg.start, dh, T).noalias() = vh * s.transpose();
        c.probs.push_back(std::move(s));
      }
    }
    Mat<S> a = W(kWo) * c.o;
    a.colwise() += W(kBo).col(0);
    if (p_drop > 0.0) {
      draw_dropout_mask<S>(c.mask, D, N, p_drop, *rng);
      a.array() *= c.mask.array();
    }
    c.x1 = c.x + a;
    layer_norm<S>(c.x1, W(kLn2G), W(kLn2B), c.w, c.ln2.xhat, c.ln2.rstd);
    c.hpre.noalias() = W(kW1) * c.w;
    c.hpre.colwise() += W(kB1).col(0);
    x = c.x1;
    x.noalias() += W(kW2) * c.hpre.cwiseMax(S(0));
    x.colwise() += W(kB2).col(0);
  }
  cache.xl = std::move(x);
  layer_norm<S>(cache.xl, P[final_param(kLnfG)].value,
                P[final_param(kLnfB)].value, cache.xf, cache.lnf.xhat,
                cache.lnf.rstd);
  Mat<S> out = P[final_param(kOutW)].value * cache.xf;
  out.colwise() += P[final_param(kOutB)].value.col(0);
  return out;
}

template <typename S>
double TransformerNetwork<S>::forward_backward(std::span<const Example> batch,
                                               double p_drop, Rng* rng,
                                               bool backward) {
  std::vector<Token> tokens;
  std::vector<int> targets;
  std::vector<Segment> segments;
  for (const auto& ex : batch) {
    segments.push_back({static_cast<Eigen::Index>(tokens.size()),
                        static_cast<Eigen::Index>(ex.input.size())});
    tokens.insert(tokens.end(), ex.input.begin(), ex.input.end());
    for (Token t : ex.target) targets.push_back(static_cast<int>(t));
  }
  const std::size_t count = targets.size();

  Cache cache;
  const Mat<S> logits = forward(tokens, segments, p_drop, rng, cache);
  Mat<S> dlogits;
  const double loss =
      softmax_xent<S>(logits, targets, count, backward ? &dlogits : nullptr);
  if (!backward) return loss;

  auto& P = this->params_;
  this->zero_grad();
  const auto D = static_cast<Eigen::Index>(cfg_.hidden_dim);
  const auto heads = static_cast<Eigen::Index>(cfg_.num_heads);
  const Eigen::Index dh = D / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  P[final_param(kOutW)].grad.noalias() = dlogits * cache.xf.transpose();
  P[final_param(kOutB)].grad = dlogits.rowwise().sum();
  const Mat<S> dxf = P[final_param(kOutW)].value.transpose() * dlogits;
  Mat<S> dx = layer_norm_backward<S>(
      dxf, cache.lnf.xhat, cache.lnf.rstd, P[final_param(kLnfG)].value,
      P[final_param(kLnfG)].grad, P[final_param(kLnfB)].grad);

  for (std::size_t l = cfg_.num_layers; l-- > 0;) {
    const auto& c = cache.layers[l];
    auto W = [&](std::size_t k) -> const Mat<S>& {
      return P[layer_param(l, k)].value;
    };
    auto G = [&](std::size_t k) -> Mat<S>& { return P[layer_param(l, k)].grad; };

    // feed-forward sublayer: x2 = x1 + W2 relu(W1 w + b1) + b2
    const Mat<S> hrelu = c.hpre.cwiseMax(S(0));
    G(kW2).noalias() += dx * hrelu.transpose();
    G(kB2) += dx.rowwise().sum();
    Mat<S> dh_ff = W(kW2).transpose() * dx;
    dh_ff.array() *= (c.hpre.array() > S(0)).template cast<S>();
    G(kW1).noalias() += dh_ff * c.w.transpose();
    G(kB1) += dh_ff.rowwise().sum();
    const Mat<S> dw = W(kW1).transpose() * dh_ff;
    Mat<S> dx1 = dx + layer_norm_backward<S>(dw, c.ln2.xhat, c.ln2.rstd,
                                             W(kLn2G), G(kLn2G), G(kLn2B));

    // attention sublayer: x1 = x + mask * (Wo o + bo)
    Mat<S> da = dx1;
    if (p_drop > 0.0) da.array() *= c.mask.array();
    G(kWo).noalias() += da * c.o.transpose();
    G(kBo) += da.rowwise().sum();
    const Mat<S> dout = W(kWo).transpose() * da;

    Mat<S> dq = Mat<S>::Zero(D, c.q.cols());
    Mat<S> dk = Mat<S>::Zero(D, c.k.cols());
    Mat<S> dv = Mat<S>::Zero(D, c.v.cols());
    std::size_t pi = 0;
    Eigen::Index start = 0;
    // Segments are contiguous and in order; recover them from probs sizes.
    while (pi < c.probs.size()) {
      const Eigen::Index T = c.probs[pi].rows();
      for (Eigen::Index h = 0; h < heads; ++h, ++pi) {
        const Mat<S>& prob = c.probs[pi];
        const auto qh = c.q.block(h * dh, start, dh, T);
        const auto kh = c.k.block(h * dh, start, dh, T);
        const auto vh = c.v.block(h * dh, start, dh, T);
        const auto doh = dout.block(h * dh, start, dh, T);
        dv.block(h * dh, start, dh, T).noalias() = doh * prob;
        const Mat<S> dprob = doh.transpose() * vh;
        const Eigen::Matrix<S, Eigen::Dynamic, 1> rowdot =
            (dprob.array() * prob.array()).rowwise().sum();
        const Mat<S> ds =
            (prob.array() * (dprob.array().colwise() - rowdot.array()))
                .matrix() *
            scale;
        dq.block(h * dh, start, dh, T).noalias() = kh * ds.transpose();
        dk.block(h * dh, start, dh, T).noalias() = qh * ds;
      }
      start += T;
    }
    G(kWq).noalias() += dq * c.u.transpose();
    G(kBq) += dq.rowwise().sum();
    G(kWk).noalias() += dk * c.u.transpose();
    G(kBk) += dk.rowwise().sum();
    G(kWv).noalias() += dv * c.u.transpose();
    G(kBv) += dv.rowwise().sum();
    Mat<S> du = W(kWq).transpose() * dq;
    du.noalias() += W(kWk).transpose() * dk;
    du.noalias() += W(kWv).transpose() * dv;
    dx = dx1 + layer_norm_backward<S>(du, c.ln1.xhat, c.ln1.rstd, W(kLn1G),
                                      G(kLn1G), G(kLn1B));
  }

  auto& dembed = P[0].grad;
  for (std::size_t c = 0; c < tokens.size(); ++c) {
    dembed.col(tokens[c]) += dx.col(static_cast<Eigen::Index>(c));
  }
  return loss;
}

template <typename S>
Mat<S> TransformerNetwork<S>::logits(std::span<const Token> input) const {
  std::vector<Token> tokens(input.begin(), input.end());
  Cache cache;
  return forward(tokens, {{0, static_cast<Eigen::Index>(tokens.size())}}, 0.0,
                 nullptr, cache);
}

template class TransformerNetwork<float>;
template class TransformerNetwork<double>;

}  // namespace locglob::lm::detail
