// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "locglob/hypotheses.hpp"
#include "locglob/theory.hpp"

using namespace locglob;
using namespace locglob::theory;

namespace {

Dataset small_dataset(std::uint64_t seed) {
  TaskOptions o;
  o.num_global = 4;
  o.num_local = 3;
  o.num_classes = 3;
  o.num_samples = 60;
  return make_synthetic_task(o, seed).data;
}

FeatureSpec spec_of(const Dataset& d, FeatureSubset s = FeatureSubset::full) {
  const auto pairs = d.seen_pairs();
  return FeatureSpec(d.num_global, d.num_local, pairs, s);
}

double golden_section(auto&& f, double lo, double hi) {
  const double r = (std::sqrt(5.0) - 1) / 2;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  while (b - a > 1e-12) {
    if (f(c) < f(d)) {
      b = d;
    } else {
      a = c;
    }
    c = b - r * (b - a);
    d = a + r * (b - a);
  }
  return (a + b) / 2;
}

}  // namespace

TEST_SUITE("theory") {

TEST_CASE("featurize") {
  const std::vector<std::pair<std::size_t, std::size_t>> seen{{0, 1}, {2, 2}};
  const FeatureSpec spec(3, 3, seen, FeatureSubset::full);
  CHECK(spec.num_features() == 3 + 3 + 2);
  auto count = [](const std::vector<std::uint8_t>& v) {
    std::size_t n = 0;
    for (auto x : v) {
      CHECK((x == 0 || x == 1));
      n += x;
    }
    return n;
  };
  CHECK(count(featurize(spec, 0, 1)) == 3);
  CHECK(count(featurize(spec, 2, 2)) == 3);
  CHECK(count(featurize(spec, 1, 1)) == 2);
  CHECK(count(featurize(spec, 0, 2)) == 2);
  CHECK(spec.active(0, 2).size() == 2);
  CHECK_THROWS(featurize(spec, 3, 0));

  const FeatureSpec g(3, 3, seen, FeatureSubset::global_only);
  CHECK(g.num_features() == 3);
  CHECK(g.active(1, 2).size() == 1);
  const FeatureSpec l(3, 3, seen, FeatureSubset::local_only);
  CHECK(l.active(1, 2) == std::vector<std::size_t>{*l.index({FeatureKind::local, 0, 2})});
}

TEST_CASE("training descends and converges") {
  const auto data = small_dataset(1);
  const auto cells = aggregate(data);
  for (auto subset : {FeatureSubset::full, FeatureSubset::global_only,
                      FeatureSubset::local_only}) {
    const auto m = train_loglinear(data, subset, 0.5);
    const Eigen::MatrixXd zero =
        Eigen::MatrixXd::Zero(m.theta.rows(), m.theta.cols());
    CHECK(objective(m.spec, cells, m.theta, 0.5) <=
          objective(m.spec, cells, zero, 0.5));
    CHECK(m.stats.grad_norm < 1e-8);
    for (std::size_t g = 0; g < data.num_global; ++g) {
      for (std::size_t l = 0; l < data.num_local; ++l) {
        double s = 0;
        for (double p : m.predict(g, l)) s += p;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("strong regularization gives near-uniform predictions") {
  const auto data = small_dataset(2);
  const auto m = train_loglinear(data, FeatureSubset::full, 1e4);
  CHECK(m.theta.cwiseAbs().maxCoeff() < 1e-2);
  for (double p : m.predict(1, 1)) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-2));
}

TEST_CASE("one-feature instance matches a scalar minimization") {
  Dataset d;
  d.num_global = 1;
  d.num_local = 1;
  d.num_classes = 2;
  d.samples = {{0, 0, 0}};
  const double lambda = 0.3;
  const auto m = train_loglinear(d, FeatureSubset::global_only, lambda);
  // optimum is antisymmetric: theta = (t, -t)
  const double t = golden_section(
      [&](double x) {
        return std::log1p(std::exp(-2 * x)) + 2 * lambda * x * x;
      },
      -10, 10);
  const FeatureKey key{FeatureKind::global, 0, 0};
  CHECK(m.weight(0, key) == doctest::Approx(t).epsilon(1e-6));
  CHECK(m.weight(1, key) == doctest::Approx(-t).epsilon(1e-6));
}

TEST_CASE("analytic gradient") {
  Rng rng(4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto data = small_dataset(seed);
    const auto spec = spec_of(data);
    Eigen::MatrixXd theta(3, spec.num_features());
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta.data()[i] = rng.normal();
    CHECK(grad_check_loglinear(spec, data, theta, 0.7) < 1e-6);
  }

  // regularizer alone
  const auto data = small_dataset(9);
  const auto spec = spec_of(data);
  Eigen::MatrixXd theta = Eigen::MatrixXd::Random(3, spec.num_features());
  Eigen::MatrixXd grad;
  objective(spec, {}, theta, 0.25, &grad);
  CHECK(grad == 2 * 0.25 * theta);

  // at zero, the data gradient is expected minus observed counts
  const auto cells = aggregate(data);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(3, spec.num_features());
  objective(spec, cells, zero, 1.0, &grad);
  Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(3, spec.num_features());
  for (const auto& c : cells) {
    for (auto i : spec.active(c.g, c.l)) {
      for (std::size_t y = 0; y < 3; ++y) {
        expect(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(i)) +=
            c.total / 3.0 - c.counts[y];
      }
    }
  }
  CHECK((grad - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("objective is convex along random segments") {
  const auto data = small_dataset(5);
  const auto spec = spec_of(data);
  const auto cells = aggregate(data);
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    Eigen::MatrixXd a(3, spec.num_features()), b(3, spec.num_features());
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      a.data()[k] = 3 * rng.normal();
      b.data()[k] = 3 * rng.normal();
    }
    const double mid = objective(spec, cells, (a + b) / 2, 0.1);
    const double ends =
        (objective(spec, cells, a, 0.1) + objective(spec, cells, b, 0.1)) / 2;
    CHECK(mid <= ends + 1e-9);
  }
}

TEST_CASE("epsilon") {
  const auto data = small_dataset(7);
  const auto full = train_loglinear(data, FeatureSubset::full, 1.0);
  const auto glob = train_loglinear(data, FeatureSubset::global_only, 1.0);

  const auto same = measure_epsilon(full, full, data);
  for (double e : same.sum) CHECK(e == 0.0);

  const auto eps = measure_epsilon(full, glob, data);
  CHECK(eps.shared.size() == data.num_global);
  for (std::size_t k = 0; k < eps.shared.size(); ++k) {
    const auto& key = eps.shared[k];
    double sum = 0, mx = 0;
    for (const auto& s : data.samples) {
      if (s.g != key.global_value) continue;
      const auto p = full.predict(s.g, s.l);
      const auto q = glob.predict(s.g, s.l);
      double l1 = 0;
      for (std::size_t y = 0; y < p.size(); ++y) l1 += std::abs(p[y] - q[y]);
      sum += l1;
      mx = std::max(mx, l1);
    }
    CHECK(eps.sum[k] >= 0.0);
    CHECK(eps.sum[k] == doctest::Approx(sum).epsilon(1e-12));
    CHECK(eps.per_context_max[k] == doctest::Approx(mx).epsilon(1e-12));
  }

  const auto loc = train_loglinear(data, FeatureSubset::local_only, 1.0);
  CHECK_THROWS(measure_epsilon(glob, loc, data));
}

TEST_CASE("lemma holds across the regularization sweep") {
  const auto data = small_dataset(8);
  for (double lambda : {0.01, 0.1, 1.0, 10.0}) {
    const auto full = train_loglinear(data, FeatureSubset::full, lambda);
    const auto glob = train_loglinear(data, FeatureSubset::global_only, lambda);
    const auto loc = train_loglinear(data, FeatureSubset::local_only, lambda);
    INFO("lambda " << lambda);
    auto r = verify_lemma(full, glob, data, 1e-8);
    CHECK(r.pass());
    CHECK(r.num_checked == 3 * data.num_global);
    CHECK(verify_lemma(full, loc, data, 1e-8).pass());

    r = verify_lemma(full, full, data, 1e-8);
    CHECK(r.pass());
    CHECK(r.slack == doctest::Approx(2e-8 / lambda));
  }
}

TEST_CASE("bound arithmetic") {
  CHECK(proposition_bound(0.1, 1.0) == doctest::Approx(std::exp(0.4) - 1));
  CHECK(proposition_bound(0.1, 1.0) == doctest::Approx(0.4918).epsilon(1e-4));
  CHECK(proposition_bound(1.0, 1.0, 2.0) == doctest::Approx(std::exp(2.0) - 1));
  CHECK(std::isinf(proposition_bound(1e6, 1e-3)));
}

TEST_CASE("copy task: disagreement vanishes as regularization weakens") {
  const auto task = make_copy_task(5, 40);
  CHECK_FALSE(task.surprising.empty());
  double last_eps = 1e300, last_dev = 1e300;
  for (double lambda : {1.0, 0.1, 0.01, 1e-3, 1e-4}) {
    const auto r = verify_proposition(task, lambda);
    INFO("lambda " << lambda);
    CHECK(r.pass());
    CHECK(r.epsilon < last_eps);
    CHECK(r.max_deviation < last_dev);
    last_eps = r.epsilon;
    last_dev = r.max_deviation;
  }
  CHECK(last_eps < 0.01);
  CHECK(last_dev < 0.02);
}

TEST_CASE("proposition holds on random tasks") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto task = make_synthetic_task({}, seed);
    for (const auto& [g, l] : task.surprising) {
      CHECK_FALSE(spec_of(task.data).seen(g, l));
    }
    const auto r = verify_proposition(task, 1.0);
    CHECK(r.pass());
    CHECK(r.lemma_global.pass());
    CHECK(r.lemma_local.pass());
    CHECK(r.max_deviation <= r.bound);
    CHECK(r.mutations.size() == 2);
  }
}

TEST_CASE("product of experts") {
  const std::vector<double> uni{0.25, 0.25, 0.25, 0.25};
  const std::vector<double> loc{0.1, 0.2, 0.3, 0.4};
  const auto p = product_of_experts(uni, loc);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == doctest::Approx(loc[i]));

  const std::vector<double> glob{0.4, 0.1, 0.1, 0.4};
  const auto q = product_of_experts(glob, loc);
  const auto r = hypotheses::interp_loglinear(CategoricalDist(loc),
                                              CategoricalDist(glob), 1.0, 1.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(q[i] == doctest::Approx(r[i]));
}

TEST_CASE("sweep detects the per-context mutation") {
  SweepOptions o;
  o.lambdas = {10.0};
  o.num_tasks = 2;
  o.task.num_samples = 2000;
  o.seed = 3;
  const auto r = run_sweep(o);
  CHECK(r.trials.size() == 2);
  CHECK(r.num_failed() == 0);
  CHECK(r.num_detected(Mutation::per_context_epsilon) >= 1);
  const auto j = to_json(r);
  for (const auto& t : j.at("trials")) {
    for (const char* k : {"lambda", "epsilon", "bound", "max_deviation", "pass"}) {
      CHECK(t.contains(k));
    }
  }
  CHECK(to_csv(r).find("lambda") != std::string::npos);
}

TEST_CASE("sweep options parse and name bad fields") {
  nlohmann::json j = {{"lambdas", {0.1, 1.0}}, {"num_tasks", 4},
                      {"task", {{"num_samples", 100}}}};
  const auto o = sweep_options_from_json(j);
  CHECK(o.lambdas == std::vector<double>{0.1, 1.0});
  CHECK(o.task.num_samples == 100);
  CHECK(o.task.num_global == 20);
  CHECK(sweep_options_from_json(to_json(o)).num_tasks == 4);

  auto missing = j;
  missing.erase("num_tasks");
  CHECK_THROWS_WITH(sweep_options_from_json(missing),
                    doctest::Contains("num_tasks"));
  auto bad = j;
  bad["task"]["num_clases"] = 3;
  CHECK_THROWS_WITH(sweep_options_from_json(bad),
                    doctest::Contains("num_clases"));
  auto neg = j;
  neg["lambdas"] = {0.1, -1.0};
  CHECK_THROWS_WITH(sweep_options_from_json(neg), doctest::Contains("lambdas"));
}

}  // TEST_SUITE
