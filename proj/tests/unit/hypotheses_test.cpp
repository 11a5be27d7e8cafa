// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "locglob/automata.hpp"
#include "locglob/corpus.hpp"
#include "locglob/eval.hpp"
#include "locglob/hypotheses.hpp"

using namespace locglob;
using namespace locglob::hypotheses;

namespace {

CategoricalDist dist(std::vector<double> p) { return CategoricalDist(std::move(p)); }

CategoricalDist random_dist(std::size_t n, Rng& rng, double zero_prob = 0.0) {
  std::vector<double> w(n);
  for (auto& v : w) v = rng.bernoulli(zero_prob) ? 0.0 : rng.uniform() + 1e-3;
  if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) {
    w[0] = 1.0;
  }
  return CategoricalDist::from_weights(std::move(w));
}

// Prediction depends on the context length and last token only.
class TableModel : public NextTokenModel {
 public:
  TableModel(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}
  std::size_t output_size() const override { return n_; }
  CategoricalDist next_dist(std::span<const Token> ctx) const override {
    Rng rng(derive_seed(seed_, "row",
                        ctx.size() * 1000 + (ctx.empty() ? 999 : ctx.back())));
    return random_dist(n_, rng);
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
};

Context context(std::vector<Token> g, Token l) {
  Context c;
  c.global_ctx = TokenSeq{std::move(g), false};
  c.local_token = l;
  return c;
}

double brute_mean_tv(std::span<const CategoricalDist> out,
                     std::span<const CategoricalDist> targets) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double d = 0;
    for (std::size_t k = 0; k < out[i].size(); ++k) {
      d += std::abs(out[i][k] - targets[i][k]);
    }
    s += d / 2;
  }
  return s / static_cast<double>(out.size());
}

}  // namespace

TEST_SUITE("hypotheses") {

TEST_CASE("exact local delegates to the automaton and ignores X_G") {
  automata::DfaConfig cfg;
  cfg.seed = 3;
  const auto d = automata::generate_dfa(cfg);
  const auto ctxs = automata::make_surprising_contexts(d, 30, 1);
  Sources src;
  src.dfa = &d;
  for (const auto& c : ctxs) {
    const auto p = hyp_local(c, Source::dfa_exact, src);
    CHECK(p == automata::ground_truth_local(d, c.local_token));
    auto other = c;
    other.global_ctx.tokens.clear();
    CHECK(hyp_local(other, Source::dfa_exact, src) == p);
  }
}

TEST_CASE("bigram local") {
  const std::vector<TokenSeq> corpus{{{0, 1}, false}};
  const auto counts = corpus::count_corpus(corpus, 3);
  Sources src;
  src.counts = &counts;
  const auto p = hyp_local(context({2, 2}, 0), Source::bigram_counts, src);
  CHECK(p[1] == 1.0);
  CHECK(hyp_local(context({}, 0), Source::bigram_counts, src) == p);
  CHECK_THROWS(hyp_local(context({}, 0), Source::dfa_exact, src));
}

TEST_CASE("exact global ignores X_L") {
  automata::DfaConfig cfg;
  cfg.seed = 4;
  const auto d = automata::generate_dfa(cfg);
  Sources src;
  src.dfa = &d;
  for (const auto& c : automata::make_surprising_contexts(d, 30, 2)) {
    auto other = c;
    other.local_token = (c.local_token + 1) % 128;
    CHECK(hyp_global(c, Source::dfa_exact, src) ==
          hyp_global(other, Source::dfa_exact, src));
    CHECK(hyp_global(c, Source::dfa_exact, src) ==
          automata::ground_truth_global(d, c.global_ctx.tokens));
  }
}

TEST_CASE("complete beam equals exact marginalization") {
  const TableModel helper(7, 11);
  const std::vector<Token> g{2, 5, 1};
  const auto first = helper.next_dist(g);
  std::vector<double> expect(7, 0.0);
  double mass = 0.0;
  for (Token v = 0; v < 6; ++v) {
    auto ext = g;
    ext.push_back(v);
    const auto next = helper.next_dist(ext);
    for (std::size_t k = 0; k < 7; ++k) expect[k] += first[v] * next[k];
    mass += first[v];
  }
  const auto got = beam_global(helper, g, 7);
  for (std::size_t k = 0; k < 7; ++k) {
    CHECK(got[k] == doctest::Approx(expect[k] / mass).epsilon(1e-12));
  }
  CHECK(beam_global(helper, g, 100) == got);
}

TEST_CASE("beam of width one follows the top token") {
  const TableModel helper(7, 12);
  const std::vector<Token> g{3};
  const auto first = helper.next_dist(g);
  Token top = 0;
  for (Token v = 1; v < 6; ++v) {
    if (first[v] > first[top]) top = v;
  }
  auto ext = g;
  ext.push_back(top);
  const auto expect = helper.next_dist(ext);
  const auto got = beam_global(helper, g, 1);
  for (std::size_t k = 0; k < 7; ++k) {
    CHECK(got[k] == doctest::Approx(expect[k]).epsilon(1e-12));
  }
}

TEST_CASE("beam global ignores X_L and needs a helper") {
  const TableModel helper(7, 13);
  Sources src;
  src.helper_lm = &helper;
  CHECK(hyp_global(context({1, 2}, 0), Source::beam_lm, src, 3) ==
        hyp_global(context({1, 2}, 5), Source::beam_lm, src, 3));
  Sources none;
  CHECK_THROWS_AS(hyp_global(context({1}, 0), Source::beam_lm, none), Error);
}

TEST_CASE("unigram and ignore") {
  const std::vector<TokenSeq> corpus{{{0, 1, 1}, true}};
  const auto counts = corpus::count_corpus(corpus, 2);
  CHECK(hyp_unigram(counts) == corpus::unigram_dist(counts));

  const TableModel lm(3, 1);
  const auto c = context({0, 1}, 1);
  CHECK(hyp_ignore(lm, c) == lm.next_dist(c.global_ctx.tokens));

  Sources src;
  src.counts = &counts;
  src.lm = &lm;
  Hypothesis u;
  u.kind = Kind::unigram;
  CHECK(evaluate(u, c, src) == evaluate(u, context({1}, 0), src));
  Hypothesis ig;
  ig.kind = Kind::ignore;
  CHECK(evaluate(ig, c, src) == lm.next_dist(c.global_ctx.tokens));
}

TEST_CASE("ignore puts less than epsilon on a natural surprising token") {
  std::vector<TokenSeq> sentences;
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    std::vector<Token> s;
    for (std::size_t j = 0; j < 2 + rng.below(6); ++j) s.push_back(rng.below(9));
    sentences.push_back({s, true});
  }
  const auto counts = corpus::count_corpus(sentences, 9);
  const TableModel lm(10, 5);
  corpus::NaturalContextOptions opt;
  opt.top_k = 5;
  opt.num_contexts = 40;
  for (const auto& c :
       corpus::make_surprising_natural(lm, sentences, counts, opt, 3)) {
    CHECK(hyp_ignore(lm, c)[c.local_token] < c.epsilon);
  }
}

TEST_CASE("restart evaluates the second model on the full context") {
  const TableModel b(4, 2);
  Sources src;
  src.restart_lm = &b;
  Hypothesis h;
  h.kind = Kind::restart;
  const auto c = context({0, 2}, 3);
  const std::vector<Token> full{0, 2, 3};
  CHECK(evaluate(h, c, src) == b.next_dist(full));
  src.restart_lm = nullptr;
  CHECK_THROWS(evaluate(h, c, src));
}

TEST_CASE("linear interpolation") {
  Rng rng(1);
  const auto l = random_dist(5, rng), g = random_dist(5, rng);
  CHECK(interp_linear(l, g, 1.0) == l);
  CHECK(interp_linear(l, g, 0.0) == g);
  const auto p = interp_linear(dist({1, 0}), dist({0, 1}), 0.5);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);
  CHECK_THROWS(interp_linear(l, g, 1.5));
  CHECK_THROWS(interp_linear(l, dist({1, 0}), 0.5));
}

TEST_CASE("log-linear interpolation") {
  Rng rng(2);
  const auto l = random_dist(6, rng, 0.3), g = random_dist(6, rng, 0.3);
  CHECK(eval::tv_distance(interp_loglinear(l, g, 0.0, 1.0), l) <= 1e-8);
  CHECK(eval::tv_distance(interp_loglinear(l, g, 1.0, 0.0), g) <= 1e-8);

  const auto uni = CategoricalDist::uniform(6);
  // a uniform factor cancels
  CHECK(eval::tv_distance(interp_loglinear(l, uni, 1.0, 1.0), l) < 1e-8);

  const auto p = interp_loglinear(dist({0.8, 0.2}), dist({0.2, 0.8}), 1, 1);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_dist(8, rng), b = random_dist(8, rng);
    const double l1 = rng.uniform(), l2 = rng.uniform();
    const auto floored = interp_loglinear(a, b, l1, l2);
    CHECK(floored.sum() == doctest::Approx(1.0).epsilon(1e-9));
    std::vector<double> w(8);
    for (std::size_t i = 0; i < 8; ++i) {
      w[i] = std::pow(b[i], l1) * std::pow(a[i], l2);
    }
    const auto unfloored = CategoricalDist::from_weights(w);
    CHECK(eval::tv_distance(floored, unfloored) < 1e-6);
  }
}

TEST_CASE("fit_lambda recovers the endpoints") {
  Rng rng(3);
  std::vector<CategoricalDist> l, g;
  for (int i = 0; i < 10; ++i) {
    l.push_back(random_dist(6, rng, 0.3));
    g.push_back(random_dist(6, rng, 0.3));
  }
  auto f = fit_lambda(Family::linear, l, g, l, 0.01, TieMode::complementary);
  CHECK(f.params.lambda == 1.0);
  CHECK(f.error == 0.0);
  f = fit_lambda(Family::linear, l, g, g, 0.01, TieMode::complementary);
  CHECK(f.params.lambda == 0.0);
  CHECK(f.error == 0.0);
  CHECK(f.grid.size() == 101);

  f = fit_lambda(Family::loglinear, l, g, l, 0.01, TieMode::complementary);
  CHECK(f.params.lambda1 == 0.0);
  CHECK(f.params.lambda2 == 1.0);
  CHECK(f.error == 0.0);
  f = fit_lambda(Family::loglinear, l, g, g, 0.05, TieMode::free);
  CHECK(f.params.lambda1 == 1.0);
  CHECK(f.params.lambda2 == 0.0);
  CHECK(f.grid.size() == 21 * 21);
}

TEST_CASE("fit_lambda agrees with an independent grid search") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<CategoricalDist> l, g, t;
    for (int i = 0; i < 8; ++i) {
      l.push_back(random_dist(5, rng, 0.2));
      g.push_back(random_dist(5, rng, 0.2));
      t.push_back(random_dist(5, rng));
    }
    auto brute = [&](auto&& make, double step, bool two_d) {
      double best = std::numeric_limits<double>::infinity();
      double best_a = -1, best_b = -1;
      const int n = static_cast<int>(std::lround(1 / step));
      for (int i = 0; i <= n; ++i) {
        for (int j = 0; j <= (two_d ? n : 0); ++j) {
          const double a = i * step, b = two_d ? j * step : 1.0 - a;
          std::vector<CategoricalDist> out;
          for (std::size_t c = 0; c < l.size(); ++c) {
            out.push_back(make(l[c], g[c], a, b));
          }
          const double e = brute_mean_tv(out, t);
          if (e < best - 1e-15) {
            best = e;
            best_a = a;
            best_b = b;
          }
        }
      }
      return std::tuple{best, best_a, best_b};
    };

    auto [e1, a1, b1] = brute(
        [](const auto& x, const auto& y, double a, double) {
          std::vector<double> w(x.size());
          for (std::size_t k = 0; k < w.size(); ++k) {
            w[k] = a * x[k] + (1 - a) * y[k];
          }
          return CategoricalDist::from_weights(w);
        },
        0.01, false);
    auto f = fit_lambda(Family::linear, l, g, t, 0.01, TieMode::complementary);
    CHECK(f.error == doctest::Approx(e1).epsilon(1e-12));
    CHECK(f.params.lambda == doctest::Approx(a1).epsilon(1e-12));

    auto loglin = [](const auto& x, const auto& y, double a, double b) {
      std::vector<double> w(x.size());
      for (std::size_t k = 0; k < w.size(); ++k) {
        w[k] = std::exp(a * std::log(std::max(y[k], kLogFloor)) +
                        b * std::log(std::max(x[k], kLogFloor)));
      }
      return CategoricalDist::from_weights(w);
    };
    auto [e2, a2, b2] = brute(loglin, 0.01, false);
    f = fit_lambda(Family::loglinear, l, g, t, 0.01, TieMode::complementary);
    CHECK(f.error == doctest::Approx(e2).epsilon(1e-9));
    CHECK(f.params.lambda1 == doctest::Approx(a2).epsilon(1e-12));

    auto [e3, a3, b3] = brute(loglin, 0.05, true);
    f = fit_lambda(Family::loglinear, l, g, t, 0.05, TieMode::free);
    CHECK(f.error == doctest::Approx(e3).epsilon(1e-9));
    CHECK(f.params.lambda1 == doctest::Approx(a3).epsilon(1e-12));
    CHECK(f.params.lambda2 == doctest::Approx(b3).epsilon(1e-12));

    // the grid contains both endpoints
    const double local_err = brute_mean_tv(l, t);
    const double global_err = brute_mean_tv(g, t);
    CHECK(f.error <= std::min(local_err, global_err) + 1e-12);
  }
}

TEST_CASE("fit_lambda breaks ties toward the smaller lambda") {
  const std::vector<CategoricalDist> same{dist({0.5, 0.5})};
  const auto f =
      fit_lambda(Family::linear, same, same, same, 0.1, TieMode::complementary);
  CHECK(f.params.lambda == 0.0);
  CHECK_THROWS(fit_lambda(Family::linear, same, same, same, 0.3,
                          TieMode::complementary));
  CHECK_THROWS(fit_lambda(Family::linear, {}, {}, {}, 0.1,
                          TieMode::complementary));
}

TEST_CASE("interpolation params") {
  auto p = InterpolationParams::complementary(0.3);
  CHECK(p.lambda2 == doctest::Approx(0.7));
  CHECK_NOTHROW(p.validate());
  p.lambda2 = 0.9;
  CHECK_THROWS(p.validate());
  p.tie_mode = TieMode::free;
  CHECK_NOTHROW(p.validate());
  p.lambda1 = -0.1;
  CHECK_THROWS(p.validate());
  CHECK(default_grid_step(Family::linear, TieMode::free) == 0.01);
  CHECK(default_grid_step(Family::loglinear, TieMode::free) == 0.05);
  CHECK(default_grid_step(Family::loglinear, TieMode::complementary) == 0.01);
}

TEST_CASE("hypothesis json and names") {
  Hypothesis h;
  h.kind = Kind::interp_loglinear;
  h.local_source = Source::bigram_counts;
  h.global_source = Source::beam_lm;
  h.fit = true;
  h.params.tie_mode = TieMode::free;
  h.beam_width = 9;
  const auto back = hypothesis_from_json(to_json(h));
  CHECK(back.name() == h.name());
  CHECK(back.beam_width == 9);
  CHECK(back.fit);
  CHECK(back.params.tie_mode == TieMode::free);
  CHECK(h.name() == "interp_loglinear_free[bigram_counts][beam_lm]");

  Hypothesis bad;
  bad.kind = Kind::unigram;
  bad.fit = true;
  CHECK_THROWS(bad.validate());
  CHECK_THROWS(kind_from_string("trigram"));
}

}  // TEST_SUITE
