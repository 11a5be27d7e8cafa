// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-layer GRU language model (PyTorch gate convention):
//   r = sig(W_ir x + b_ir + W_hr h + b_hr)
//   z = sig(W_iz x + b_iz + W_hz h + b_hz)
//   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//   h' = (1 - z) * n + z * h
// State dropout multiplies h' by a mask before it is carried forward and
// read out.

#include "gru.hpp"

#include <algorithm>

namespace locglob::lm::detail {

namespace {

template <typename S>
Mat<S> sigmoid(const Mat<S>& x) {
  return (S(1) / (S(1) + (-x.array()).exp())).matrix();
}

}  // namespace

template <typename S>
GruNetwork<S>::GruNetwork(const LmConfig& config, Rng& rng) : cfg_(config) {
  const auto V = static_cast<Eigen::Index>(config.output_size());
  const auto E = static_cast<Eigen::Index>(config.embed_dim);
  const auto H = static_cast<Eigen::Index>(config.hidden_dim);
  this->add_param("embed", E, V, 1.0, rng);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto in = l == 0 ? E : H;
    const std::string p = "gru" + std::to_string(l) + ".";
    this->add_param(p + "w_i", 3 * H, in, static_cast<double>(H), rng);
    this->add_param(p + "w_h", 3 * H, H, static_cast<double>(H), rng);
    this->add_param(p + "b_i", 3 * H, 1, static_cast<double>(H), rng);
    this->add_param(p + "b_h", 3 * H, 1, static_cast<double>(H), rng);
  }
  this->add_param("out.w", V, H, static_cast<double>(H), rng);
  this->add_param("out.b", V, 1, static_cast<double>(H), rng);
}

template <typename S>
void GruNetwork<S>::forward(const std::vector<std::vector<Token>>& inputs,
                            const Packing& pack, double p_drop, Rng* rng,
                            std::vector<LayerCache>& caches) const {
  const auto B = static_cast<Eigen::Index>(inputs.size());
  const auto H = static_cast<Eigen::Index>(cfg_.hidden_dim);
  const auto steps = pack.steps();
  const auto& P = this->params_;

  const auto& embed = P[0].value;
  Mat<S> x(embed.rows(), pack.columns());
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (Eigen::Index b = 0; b < pack.width[t]; ++b) {
      x.col(pack.offset[t] + b) =
          embed.col(inputs[static_cast<std::size_t>(b)]
                          [static_cast<std::size_t>(t)]);
    }
  }

  caches.resize(cfg_.num_layers);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const auto& wi = P[w_i(l)].value;
    const auto& wh = P[w_h(l)].value;
    const auto& bi = P[b_i(l)].value;
    const auto& bh = P[b_h(l)].value;
    auto& c = caches[l];
    c.x = std::move(x);
    Mat<S> gi = wi * c.x;
    gi.colwise() += bi.col(0);
    const auto N = pack.columns();
    c.r.resize(H, N);
    c.z.resize(H, N);
    c.n.resize(H, N);
    c.ghn.resize(H, N);
    c.hprev.resize(H, N);
    c.hout.resize(H, N);
    if (p_drop > 0.0) c.mask.resize(H, N);

    Mat<S> h = Mat<S>::Zero(H, B);
    Mat<S> gh;
    Mat<S> m;
    for (Eigen::Index t = 0; t < steps; ++t) {
      const Eigen::Index c0 = pack.offset[t];
      const Eigen::Index bt = pack.width[t];
      auto hs = h.leftCols(bt);
      gh.noalias() = wh * hs;
      gh.colwise() += bh.col(0);
      auto r = c.r.middleCols(c0, bt);
      auto z = c.z.middleCols(c0, bt);
      auto n = c.n.middleCols(c0, bt);
      r = sigmoid<S>(gi.block(0, c0, H, bt) + gh.topRows(H));
      z = sigmoid<S>(gi.block(H, c0, H, bt) + gh.middleRows(H, H));
      c.ghn.middleCols(c0, bt) = gh.bottomRows(H);
      n = (gi.block(2 * H, c0, H, bt).array() +
           r.array() * gh.bottomRows(H).array())
              .tanh()
              .matrix();
      c.hprev.middleCols(c0, bt) = hs;
      hs = ((S(1) - z.array()) * n.array() + z.array() * hs.array()).matrix();
      if (p_drop > 0.0) {
        draw_dropout_mask<S>(m, H, bt, p_drop, *rng);
        c.mask.middleCols(c0, bt) = m;
        hs.array() *= m.array();
      }
      c.hout.middleCols(c0, bt) = hs;
    }
    x = c.hout;
  }
}

template <typename S>
double GruNetwork<S>::forward_backward(std::span<const Example> unsorted,
                                       double p_drop, Rng* rng,
                                       bool backward) {
  // Longest first, so the sequences alive at step t are a prefix.
  std::vector<const Example*> batch;
  batch.reserve(unsorted.size());
  for (const auto& ex : unsorted) batch.push_back(&ex);
  std::stable_sort(batch.begin(), batch.end(),
                   [](const Example* a, const Example* b) {
                     return a->input.size() > b->input.size();
                   });
  const auto H = static_cast<Eigen::Index>(cfg_.hidden_dim);
  std::vector<std::vector<Token>> inputs;
  inputs.reserve(batch.size());
  for (const auto* ex : batch) inputs.push_back(ex->input);
  const Packing pack = Packing::from(inputs);

  std::vector<int> targets(static_cast<std::size_t>(pack.columns()), -1);
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& tg = batch[b]->target;
    for (std::size_t t = 0; t < tg.size(); ++t) {
      targets[static_cast<std::size_t>(pack.offset[static_cast<Eigen::Index>(t)]) + b] =
          static_cast<int>(tg[t]);
      ++count;
    }
  }

  std::vector<LayerCache> caches;
  forward(inputs, pack, p_drop, rng, caches);
  auto& P = this->params_;
  const auto& top = caches.back().hout;
  Mat<S> logits = P[out_w()].value * top;
  logits.colwise() += P[out_b()].value.col(0);

  Mat<S> dlogits;
  const double loss =
      softmax_xent<S>(logits, targets, count, backward ? &dlogits : nullptr);
  if (!backward) return loss;

  this->zero_grad();
  P[out_w()].grad.noalias() = dlogits * top.transpose();
  P[out_b()].grad = dlogits.rowwise().sum();
  Mat<S> dx = P[out_w()].value.transpose() * dlogits;  // d(layer output)

  const auto B = static_cast<Eigen::Index>(batch.size());
  for (std::size_t l = cfg_.num_layers; l-- > 0;) {
    const auto& c = caches[l];
    const auto& wh = P[w_h(l)].value;
    Mat<S> dgi(3 * H, pack.columns());
    Mat<S> dgh(3 * H, pack.columns());
    Mat<S> dh_next = Mat<S>::Zero(H, B);
    for (Eigen::Index t = pack.steps(); t-- > 0;) {
      const Eigen::Index c0 = pack.offset[t];
      const Eigen::Index bt = pack.width[t];
      Mat<S> dh = dx.middleCols(c0, bt) + dh_next.leftCols(bt);
      if (p_drop > 0.0) dh.array() *= c.mask.middleCols(c0, bt).array();
      const auto r = c.r.middleCols(c0, bt).array();
      const auto z = c.z.middleCols(c0, bt).array();
      const auto n = c.n.middleCols(c0, bt).array();
      const auto hp = c.hprev.middleCols(c0, bt).array();
      const auto ghn = c.ghn.middleCols(c0, bt).array();
      const auto dha = dh.array();
      const auto dn_pre = (dha * (S(1) - z) * (S(1) - n * n)).eval();
      const auto dz_pre = (dha * (hp - n) * z * (S(1) - z)).eval();
      const auto dr_pre = (dn_pre * ghn * r * (S(1) - r)).eval();
      dgi.block(0, c0, H, bt) = dr_pre.matrix();
      dgi.block(H, c0, H, bt) = dz_pre.matrix();
      dgi.block(2 * H, c0, H, bt) = dn_pre.matrix();
      dgh.block(0, c0, H, bt) = dr_pre.matrix();
      dgh.block(H, c0, H, bt) = dz_pre.matrix();
      dgh.block(2 * H, c0, H, bt) = (dn_pre * r).matrix();
      dh_next.leftCols(bt) = (dha * z).matrix();
      dh_next.leftCols(bt).noalias() += wh.transpose() * dgh.middleCols(c0, bt);
    }
    P[w_h(l)].grad.noalias() = dgh * c.hprev.transpose();
    P[b_h(l)].grad = dgh.rowwise().sum();
    P[w_i(l)].grad.noalias() = dgi * c.x.transpose();
    P[b_i(l)].grad = dgi.rowwise().sum();
    dx.noalias() = P[w_i(l)].value.transpose() * dgi;
  }

  auto& dembed = P[0].grad;
  for (Eigen::Index t = 0; t < pack.steps(); ++t) {
    for (Eigen::Index b = 0; b < pack.width[t]; ++b) {
      dembed.col(inputs[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]) +=
          dx.col(pack.offset[t] + b);
    }
  }
  return loss;
}

template <typename S>
Mat<S> GruNetwork<S>::logits(std::span<const Token> input) const {
  std::vector<std::vector<Token>> inputs{{input.begin(), input.end()}};
  std::vector<LayerCache> caches;
  forward(inputs, Packing::from(inputs), 0.0, nullptr, caches);
  const auto& P = this->params_;
  Mat<S> out = P[out_w()].value * caches.back().hout;
  out.colwise() += P[out_b()].value.col(0);
  return out;
}

template class GruNetwork<float>;
template class GruNetwork<double>;

}  // namespace locglob::lm::detail
