// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "locglob/automata.hpp"
#include "locglob/corpus.hpp"
#include "locglob/eval.hpp"

using namespace locglob;
using namespace locglob::eval;
using hypotheses::Hypothesis;
using hypotheses::Kind;

namespace {

CategoricalDist dist(std::vector<double> p) { return CategoricalDist(std::move(p)); }

CategoricalDist random_dist(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (auto& v : w) v = rng.bernoulli(0.2) ? 0.0 : rng.uniform();
  w[rng.below(n)] += 0.1;
  return CategoricalDist::from_weights(std::move(w));
}

class TableModel : public NextTokenModel {
 public:
  TableModel(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}
  std::size_t output_size() const override { return n_; }
  CategoricalDist next_dist(std::span<const Token> ctx) const override {
    Rng rng(derive_seed(seed_, "row", ctx.empty() ? 999 : ctx.back()));
    return random_dist(n_, rng);
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
};

struct Fixture {
  automata::Dfa dfa = [] {
    automata::DfaConfig c;
    c.seed = 9;
    return automata::generate_dfa(c);
  }();
  std::vector<automata::SurprisingContext> contexts =
      automata::make_surprising_contexts(dfa, 25, 3);
  corpus::CountTable counts = corpus::count_corpus(
      automata::sample_corpus(dfa, 2000, 4), dfa.alphabet_size());
  TableModel m0{129, 1}, m1{129, 2}, m2{129, 3};

  SuiteInput input(std::vector<Hypothesis> hyps) const {
    SuiteInput in;
    in.hypotheses = std::move(hyps);
    in.contexts = contexts;
    in.shared.dfa = &dfa;
    in.shared.counts = &counts;
    in.seeds = {{0, &m0, &m1}, {1, &m1, &m2}};
    in.metadata = {{"language", "l0"}, {"arch", "gru"}, {"noise", "none"}};
    return in;
  }
};

Hypothesis kind(Kind k) {
  Hypothesis h;
  h.kind = k;
  return h;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("total variation examples") {
  Rng rng(1);
  const auto p = random_dist(9, rng);
  CHECK(tv_distance(p, p) == 0.0);
  CHECK(tv_distance(dist({1, 0}), dist({0, 1})) == 1.0);
  CHECK(tv_distance(dist({.5, .5}), dist({.25, .75})) == 0.25);
  CHECK_THROWS(tv_distance(dist({1}), dist({1, 0})));
}

TEST_CASE("Jensen-Shannon examples") {
  Rng rng(2);
  const auto p = random_dist(9, rng);
  CHECK(jsd(p, p) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(jsd(dist({1, 0}), dist({0, 1})) == doctest::Approx(1.0).epsilon(1e-15));
  // direct evaluation of the base-2 formula
  CHECK(jsd(dist({.5, .5}), dist({.25, .75})) ==
        doctest::Approx(0.0487949406953985).epsilon(1e-12));
  CHECK_THROWS(jsd(dist({1}), dist({1, 0})));
}

TEST_CASE("metric properties on random distributions") {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto p = random_dist(12, rng), q = random_dist(12, rng),
               r = random_dist(12, rng);
    const double pq = tv_distance(p, q);
    CHECK(pq == tv_distance(q, p));
    CHECK(pq >= 0.0);
    CHECK(pq <= 1.0);
    CHECK(pq <= tv_distance(p, r) + tv_distance(r, q) + 1e-15);
    CHECK((pq == 0.0) == (p == q));
    const double j = jsd(p, q);
    CHECK(j == doctest::Approx(jsd(q, p)).epsilon(1e-12));
    CHECK(j >= 0.0);
    CHECK(j <= 1.0);
  }
}

TEST_CASE("err is the mean distance") {
  const std::vector<CategoricalDist> model{dist({1, 0}), dist({1, 0})};
  const std::vector<CategoricalDist> hyp{dist({.8, .2}), dist({.6, .4})};
  CHECK(err(hyp, model) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(acc_from_err(err(hyp, model)) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(err(model, model) == 0.0);
  CHECK(distance(Metric::jsd, hyp[0], model[0]) == jsd(hyp[0], model[0]));
  CHECK(metric_from_string(to_string(Metric::jsd)) == Metric::jsd);
  CHECK_THROWS(metric_from_string("kl"));
}

TEST_CASE("mean and sample standard deviation") {
  const std::vector<double> xs{1, 2, 3, 4};
  CHECK(mean(xs) == 2.5);
  CHECK(sample_std(xs) == doctest::Approx(std::sqrt(5.0 / 3.0)));
  const std::vector<double> one{7};
  CHECK(sample_std(one) == 0.0);
}

TEST_CASE("unigram-only suite") {
  const Fixture f;
  const auto r = evaluate_suite(f.input({kind(Kind::unigram)}));
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].name == "unigram");
  for (double a : r.rows[0].acc) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  CHECK(r.num_contexts == 25);
  CHECK(r.seeds == std::vector<std::uint64_t>{0, 1});
}

TEST_CASE("restart equal to the model scores one") {
  const Fixture f;
  auto in = f.input({kind(Kind::restart), kind(Kind::ignore)});
  in.seeds = {{0, &f.m0, &f.m0}};
  const auto r = evaluate_suite(in);
  CHECK(r.row("restart").acc == std::vector<double>{1.0});
  CHECK(r.row("restart").mean_acc == 1.0);
}

TEST_CASE("standard regular suite") {
  const Fixture f;
  const auto hyps = standard_regular_suite();
  const auto r = evaluate_suite(f.input(hyps));
  CHECK(r.complete());
  CHECK(r.rows.size() == hyps.size());
  CHECK(check_consistency(r) == "");
  for (const auto& name : {"unigram", "local", "global", "ignore", "restart"}) {
    CHECK(r.find(name) != nullptr);
  }
  for (const auto& row : r.rows) {
    CHECK(row.acc.size() == 2);
    for (const auto& d : row.distances) {
      CHECK(d.size() == 25);
      for (double x : d) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
      }
    }
    const auto spec = hypotheses::hypothesis_from_json(row.spec);
    if (spec.fit) {
      CHECK(row.fitted.size() == 2);
      // fitted error never exceeds either endpoint
      for (std::size_t s = 0; s < 2; ++s) {
        CHECK(row.acc[s] >= r.row("local").acc[s] - 1e-12);
        CHECK(row.acc[s] >= r.row("global").acc[s] - 1e-12);
      }
    }
  }
}

TEST_CASE("a failing hypothesis is kept as a flagged row") {
  const Fixture f;
  Hypothesis beam = kind(Kind::global);
  beam.global_source = hypotheses::Source::beam_lm;
  const auto r = evaluate_suite(f.input({kind(Kind::unigram), beam}));
  REQUIRE(r.rows.size() == 2);
  CHECK_FALSE(r.rows[1].ok());
  CHECK(r.rows[1].error.find("helper") != std::string::npos);
  CHECK_FALSE(r.complete());
  CHECK(to_csv(r).find("global[beam_lm]") == std::string::npos);
}

TEST_CASE("suites need hypotheses, contexts and seeds") {
  const Fixture f;
  CHECK_THROWS(evaluate_suite(f.input({})));
  auto in = f.input({kind(Kind::unigram)});
  in.seeds.clear();
  CHECK_THROWS(evaluate_suite(in));
}

TEST_CASE("reports round trip and stay consistent") {
  const Fixture f;
  const auto r = evaluate_suite(f.input(standard_regular_suite()));
  const auto back = report_from_json(to_json(r));
  CHECK(to_json(back) == to_json(r));
  CHECK(check_consistency(back) == "");

  auto tampered = r;
  tampered.rows[0].acc[0] += 0.01;
  CHECK(check_consistency(tampered) != "");
  CHECK(ranking_discordance(r, r) == 0);
}

TEST_CASE("csv rows carry the metadata") {
  const Fixture f;
  const auto r = evaluate_suite(f.input({kind(Kind::unigram), kind(Kind::local)}));
  const auto csv = to_csv(r);
  CHECK(csv.rfind("language,arch,noise,hypothesis,seed,acc\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.find("l0,gru,none,local,1,") != std::string::npos);
}

TEST_CASE("jsd ranking is reported") {
  const Fixture f;
  auto in = f.input(standard_regular_suite());
  const auto tv = evaluate_suite(in);
  in.metric = Metric::jsd;
  const auto js = evaluate_suite(in);
  CHECK(js.metric == "jsd");
  const std::size_t n = tv.rows.size();
  CHECK(ranking_discordance(tv, js) <= n * (n - 1) / 2);
}

}  // TEST_SUITE
