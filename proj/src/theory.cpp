// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include "locglob/theory.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>

#include "locglob/rng.hpp"

namespace locglob::theory {

namespace {

constexpr double kMaxExponent = 700.0;

std::vector<double> softmax_active(const Eigen::MatrixXd& theta,
                                   std::span<const std::size_t> active) {
  const auto classes = static_cast<std::size_t>(theta.rows());
  std::vector<double> z(classes, 0.0);
  for (std::size_t y = 0; y < classes; ++y) {
    for (std::size_t i : active) {
      z[y] += theta(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(i));
    }
  }
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : z) v /= s;
  return z;
}

double l1(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

nlohmann::json lemma_json(const LemmaReport& r) {
  return {{"num_checked", r.num_checked},
          {"slack", r.slack},
          {"min_margin", r.min_margin},
          {"max_ratio", r.max_ratio},
          {"violations", r.violations.size()},
          {"pass", r.pass()}};
}

}  // namespace

std::string FeatureKey::to_string() const {
  switch (kind) {
    case FeatureKind::global:
      return "g" + std::to_string(global_value);
    case FeatureKind::local:
      return "l" + std::to_string(local_value);
    case FeatureKind::conjunction:
      return "g" + std::to_string(global_value) + "&l" +
             std::to_string(local_value);
  }
  return "?";
}

FeatureSpec::FeatureSpec(
    std::size_t num_global, std::size_t num_local,
    std::span<const std::pair<std::size_t, std::size_t>> seen_pairs,
    FeatureSubset subset)
    : num_global_(num_global), num_local_(num_local), subset_(subset) {
  if (num_global == 0 || num_local == 0) {
    throw Error("feature spec needs at least one global and one local value");
  }
  if (subset != FeatureSubset::local_only) {
    for (std::size_t g = 0; g < num_global; ++g) {
      keys_.push_back({FeatureKind::global, g, 0});
    }
  }
  if (subset != FeatureSubset::global_only) {
    for (std::size_t l = 0; l < num_local; ++l) {
      keys_.push_back({FeatureKind::local, 0, l});
    }
  }
  if (subset == FeatureSubset::full) {
    std::set<std::pair<std::size_t, std::size_t>> pairs(seen_pairs.begin(),
                                                        seen_pairs.end());
    for (const auto& [g, l] : pairs) {
      if (g >= num_global || l >= num_local) {
        throw Error("seen pair (" + std::to_string(g) + ", " +
                    std::to_string(l) + ") out of range");
      }
      keys_.push_back({FeatureKind::conjunction, g, l});
    }
  }
  for (std::size_t i = 0; i < keys_.size(); ++i) index_[keys_[i]] = i;
}

std::optional<std::size_t> FeatureSpec::index(const FeatureKey& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool FeatureSpec::seen(std::size_t g, std::size_t l) const {
  return index_.count({FeatureKind::conjunction, g, l}) > 0;
}

std::vector<std::size_t> FeatureSpec::active(std::size_t g,
                                             std::size_t l) const {
  if (g >= num_global_ || l >= num_local_) {
    throw Error("feature values (" + std::to_string(g) + ", " +
                std::to_string(l) + ") out of range");
  }
  std::vector<std::size_t> out;
  for (const FeatureKey& k :
       {FeatureKey{FeatureKind::global, g, 0}, FeatureKey{FeatureKind::local, 0, l},
        FeatureKey{FeatureKind::conjunction, g, l}}) {
    if (auto i = index(k)) out.push_back(*i);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::uint8_t> featurize(const FeatureSpec& spec, std::size_t g,
                                    std::size_t l) {
  std::vector<std::uint8_t> v(spec.num_features(), 0);
  for (std::size_t i : spec.active(g, l)) v[i] = 1;
  return v;
}

void Dataset::validate() const {
  if (num_global == 0 || num_local == 0 || num_classes == 0) {
    throw Error("dataset dimensions must be positive");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.g >= num_global || s.l >= num_local || s.y >= num_classes) {
      throw Error("sample " + std::to_string(i) + " out of range");
    }
  }
}

std::vector<std::pair<std::size_t, std::size_t>> Dataset::seen_pairs() const {
  std::set<std::pair<std::size_t, std::size_t>> s;
  for (const auto& x : samples) s.emplace(x.g, x.l);
  return {s.begin(), s.end()};
}

std::vector<Cell> aggregate(const Dataset& data) {
  data.validate();
  std::map<std::pair<std::size_t, std::size_t>, Cell> cells;
  for (const auto& s : data.samples) {
    auto [it, fresh] = cells.try_emplace({s.g, s.l});
    Cell& c = it->second;
    if (fresh) {
      c.g = s.g;
      c.l = s.l;
      c.counts.assign(data.num_classes, 0.0);
    }
    c.counts[s.y] += 1.0;
    c.total += 1.0;
  }
  std::vector<Cell> out;
  for (auto& [key, c] : cells) out.push_back(std::move(c));
  return out;
}

std::vector<double> LogLinearModel::predict(std::size_t g,
                                            std::size_t l) const {
  const auto active = spec.active(g, l);
  return softmax_active(theta, active);
}

double LogLinearModel::weight(std::size_t y, const FeatureKey& key) const {
  const auto i = spec.index(key);
  if (!i) throw Error("model has no feature " + key.to_string());
  return theta(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(*i));
}

double objective(const FeatureSpec& spec, std::span<const Cell> cells,
                 const Eigen::MatrixXd& theta, double reg_lambda,
                 Eigen::MatrixXd* gradient) {
  const auto classes = static_cast<std::size_t>(theta.rows());
  double f = reg_lambda * theta.squaredNorm();
  if (gradient) *gradient = 2.0 * reg_lambda * theta;
  std::vector<double> z(classes);
  for (const Cell& c : cells) {
    const auto active = spec.active(c.g, c.l);
    for (std::size_t y = 0; y < classes; ++y) {
      z[y] = 0.0;
      for (std::size_t i : active) {
        z[y] += theta(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(i));
      }
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (std::size_t y = 0; y < classes; ++y) s += std::exp(z[y] - mx);
    const double lse = mx + std::log(s);
    f += c.total * lse;
    for (std::size_t y = 0; y < classes; ++y) f -= c.counts[y] * z[y];
    if (gradient) {
      for (std::size_t y = 0; y < classes; ++y) {
        const double r = c.total * std::exp(z[y] - lse) - c.counts[y];
        for (std::size_t i : active) {
          (*gradient)(static_cast<Eigen::Index>(y),
                      static_cast<Eigen::Index>(i)) += r;
        }
      }
    }
  }
  return f;
}

LogLinearModel train_loglinear(const Dataset& data, FeatureSubset subset,
                               double reg_lambda,
                               const TrainOptions& options) {
  if (!(reg_lambda > 0.0)) throw Error("reg_lambda must be positive");
  if (data.samples.empty()) throw Error("training data is empty");
  const auto cells = aggregate(data);
  const auto seen = data.seen_pairs();
  LogLinearModel model{FeatureSpec(data.num_global, data.num_local, seen, subset),
                       data.num_classes, reg_lambda, {}, {}};
  const auto Y = static_cast<Eigen::Index>(data.num_classes);
  const auto F = static_cast<Eigen::Index>(model.spec.num_features());
  const Eigen::Index n = Y * F;

  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(Y, F);
  Eigen::MatrixXd grad;
  double f = objective(model.spec, cells, theta, reg_lambda, &grad);
  auto flat = [n](Eigen::MatrixXd& m) {
    return Eigen::Map<Eigen::VectorXd>(m.data(), n);
  };

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  Eigen::VectorXd d(n);
  std::size_t it = 0;
  // Decreases smaller than this are indistinguishable from rounding in f.
  auto noise = [](double v) { return 1e-13 * (1.0 + std::abs(v)); };

  for (; it < options.max_iterations; ++it) {
    const Eigen::VectorXd g = flat(grad);
    if (g.lpNorm<Eigen::Infinity>() < options.tolerance) break;

    // Two-loop recursion.
    Eigen::VectorXd q = -g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * s_hist[k].dot(q);
      q -= alpha[k] * y_hist[k];
    }
    if (!s_hist.empty()) {
      q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    } else {
      q /= std::max(1.0, g.lpNorm<Eigen::Infinity>());
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(q);
      q += (alpha[k] - beta) * s_hist[k];
    }
    d = q;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -g / std::max(1.0, g.lpNorm<Eigen::Infinity>());
      slope = g.dot(d);
    }

    double t = 1.0;
    Eigen::MatrixXd next(Y, F), next_grad;
    double f_next = 0.0;
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      flat(next) = flat(theta) + t * d;
      f_next = objective(model.spec, cells, next, reg_lambda, &next_grad);
      if (f_next <= f + 1e-4 * t * slope + noise(f)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (!s_hist.empty()) {
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      break;
    }
    Eigen::VectorXd s = flat(next) - flat(theta);
    Eigen::VectorXd yv = flat(next_grad) - g;
    const double sy = s.dot(yv);
    if (sy > 1e-300) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > options.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    theta = std::move(next);
    grad = std::move(next_grad);
    f = f_next;
  }

  model.stats.iterations = it;
  model.stats.grad_norm = flat(grad).lpNorm<Eigen::Infinity>();
  model.stats.objective = f;
  if (!(model.stats.grad_norm < options.tolerance)) {
    throw NonConvergenceError(
        "log-linear training stopped after " + std::to_string(it) +
        " iterations with gradient norm " + fmt(model.stats.grad_norm) +
        " (tolerance " + fmt(options.tolerance) + ")");
  }
  model.theta = std::move(theta);
  return model;
}

double grad_check_loglinear(const FeatureSpec& spec, const Dataset& data,
                            const Eigen::MatrixXd& theta, double reg_lambda,
                            double step) {
  const auto cells = aggregate(data);
  Eigen::MatrixXd grad;
  objective(spec, cells, theta, reg_lambda, &grad);
  Eigen::MatrixXd probe = theta;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < probe.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double up = objective(spec, cells, probe, reg_lambda);
    probe.data()[i] = orig - step;
    const double down = objective(spec, cells, probe, reg_lambda);
    probe.data()[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double a = grad.data()[i];
    const double rel =
        std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
    worst = std::max(worst, rel);
  }
  return worst;
}

double EpsilonReport::epsilon(const FeatureKey& key, bool per_context) const {
  for (std::size_t i = 0; i < shared.size(); ++i) {
    if (shared[i] == key) return per_context ? per_context_max[i] : sum[i];
  }
  throw Error("feature " + key.to_string() + " is not shared");
}

EpsilonReport measure_epsilon(const LogLinearModel& a, const LogLinearModel& b,
                              const Dataset& data) {
  if (a.num_classes != b.num_classes) {
    throw Error("models predict different class counts");
  }
  EpsilonReport r;
  std::map<FeatureKey, std::size_t> slot;
  for (const auto& k : a.spec.keys()) {
    if (b.spec.index(k)) {
      slot[k] = r.shared.size();
      r.shared.push_back(k);
    }
  }
  if (r.shared.empty()) throw Error("models share no features");
  r.sum.assign(r.shared.size(), 0.0);
  r.per_context_max.assign(r.shared.size(), 0.0);
  for (const Cell& c : aggregate(data)) {
    const double dist = l1(a.predict(c.g, c.l), b.predict(c.g, c.l));
    for (const FeatureKey& k :
         {FeatureKey{FeatureKind::global, c.g, 0},
          FeatureKey{FeatureKind::local, 0, c.l},
          FeatureKey{FeatureKind::conjunction, c.g, c.l}}) {
      auto it = slot.find(k);
      if (it == slot.end()) continue;
      r.sum[it->second] += c.total * dist;
      r.per_context_max[it->second] =
          std::max(r.per_context_max[it->second], dist);
    }
  }
  return r;
}

std::string to_string(Mutation m) {
  switch (m) {
    case Mutation::none:
      return "none";
    case Mutation::half_exponent:
      return "half_exponent";
    case Mutation::per_context_epsilon:
      return "per_context_epsilon";
  }
  return "?";
}

Mutation mutation_from_string(const std::string& s) {
  for (Mutation m : {Mutation::none, Mutation::half_exponent,
                     Mutation::per_context_epsilon}) {
    if (to_string(m) == s) return m;
  }
  throw Error("unknown mutation '" + s +
              "' (expected none, half_exponent or per_context_epsilon)");
}

std::string LemmaReport::describe_failure() const {
  if (violations.empty()) return {};
  std::ostringstream os;
  os << violations.size() << " of " << num_checked
     << " weight differences exceed the bound (lambda " << reg_lambda
     << ", slack " << slack << ")";
  const std::size_t shown = std::min<std::size_t>(violations.size(), 5);
  for (std::size_t i = 0; i < shown; ++i) {
    const auto& v = violations[i];
    os << "\n  class " << v.y << " feature " << v.feature.to_string()
       << ": |delta| = " << std::abs(v.delta) << " > bound " << v.bound;
  }
  return os.str();
}

LemmaReport verify_lemma(const LogLinearModel& a, const LogLinearModel& b,
                         const Dataset& data, double tolerance,
                         Mutation mutation) {
  if (a.reg_lambda != b.reg_lambda) {
    throw Error("models were trained with different reg_lambda");
  }
  const double lambda = a.reg_lambda;
  const EpsilonReport eps = measure_epsilon(a, b, data);
  LemmaReport r;
  r.reg_lambda = lambda;
  r.slack = 2.0 * tolerance / lambda;
  r.min_margin = std::numeric_limits<double>::infinity();
  const bool per_context = mutation == Mutation::per_context_epsilon;
  for (std::size_t k = 0; k < eps.shared.size(); ++k) {
    const FeatureKey& key = eps.shared[k];
    const double e = per_context ? eps.per_context_max[k] : eps.sum[k];
    const double bound = e / lambda + r.slack;
    for (std::size_t y = 0; y < a.num_classes; ++y) {
      const double delta = a.weight(y, key) - b.weight(y, key);
      ++r.num_checked;
      r.min_margin = std::min(r.min_margin, bound - std::abs(delta));
      r.max_ratio = std::max(r.max_ratio, std::abs(delta) / bound);
      if (std::abs(delta) > bound) r.violations.push_back({y, key, delta, bound});
    }
  }
  return r;
}

double proposition_bound(double epsilon, double reg_lambda,
                         double exponent_scale) {
  const double x = exponent_scale * epsilon / reg_lambda;
  if (x > kMaxExponent) return std::numeric_limits<double>::infinity();
  return std::expm1(x);
}

std::vector<double> product_of_experts(std::span<const double> p_global,
                                       std::span<const double> p_local) {
  if (p_global.size() != p_local.size()) {
    throw Error("product of distributions over different supports");
  }
  std::vector<double> out(p_global.size());
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = p_global[i] * p_local[i];
    s += out[i];
  }
  if (!(s > 0.0)) throw Error("product of distributions has no mass");
  for (double& v : out) v /= s;
  return out;
}

SyntheticTask make_synthetic_task(const TaskOptions& o, std::uint64_t seed) {
  if (o.num_global == 0 || o.num_local == 0 || o.num_classes == 0 ||
      o.num_samples == 0) {
    throw Error("task dimensions must be positive");
  }
  if (!(o.pair_density > 0.0 && o.pair_density < 1.0)) {
    throw Error("pair_density must be in (0, 1)");
  }
  Rng rng(seed);
  const std::size_t G = o.num_global, L = o.num_local, Y = o.num_classes;
  std::vector<std::vector<double>> a(G, std::vector<double>(Y));
  std::vector<std::vector<double>> b(L, std::vector<double>(Y));
  for (auto& row : a) for (double& v : row) v = o.logit_scale * rng.normal();
  for (auto& row : b) for (double& v : row) v = o.logit_scale * rng.normal();

  std::vector<std::vector<char>> allowed(G, std::vector<char>(L, 0));
  for (auto& row : allowed) for (char& v : row) v = rng.bernoulli(o.pair_density);
  for (std::size_t g = 0; g < G; ++g) {
    if (std::find(allowed[g].begin(), allowed[g].end(), 1) == allowed[g].end()) {
      allowed[g][rng.below(L)] = 1;
    }
  }
  for (std::size_t l = 0; l < L; ++l) {
    bool any = false;
    for (std::size_t g = 0; g < G; ++g) any = any || allowed[g][l];
    if (!any) allowed[rng.below(G)][l] = 1;
  }
  std::vector<std::pair<std::size_t, std::size_t>> support;
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t l = 0; l < L; ++l) {
      if (allowed[g][l]) support.emplace_back(g, l);
    }
  }
  if (support.size() == G * L) throw Error("task has no held-out pairs");

  SyntheticTask task;
  task.data = {G, L, Y, {}};
  for (int attempt = 0; attempt < 100; ++attempt) {
    task.data.samples.clear();
    std::vector<char> seen_g(G, 0), seen_l(L, 0);
    std::vector<double> w(Y);
    for (std::size_t i = 0; i < o.num_samples; ++i) {
      const auto [g, l] = support[rng.below(support.size())];
      const double mx = std::max(
          *std::max_element(a[g].begin(), a[g].end()) +
              *std::max_element(b[l].begin(), b[l].end()),
          0.0);
      for (std::size_t y = 0; y < Y; ++y) w[y] = std::exp(a[g][y] + b[l][y] - mx);
      task.data.samples.push_back({g, l, rng.categorical(w)});
      seen_g[g] = seen_l[l] = 1;
    }
    if (std::count(seen_g.begin(), seen_g.end(), 1) ==
            static_cast<std::ptrdiff_t>(G) &&
        std::count(seen_l.begin(), seen_l.end(), 1) ==
            static_cast<std::ptrdiff_t>(L)) {
      const auto seen = task.data.seen_pairs();
      const std::set<std::pair<std::size_t, std::size_t>> s(seen.begin(),
                                                            seen.end());
      for (std::size_t g = 0; g < G; ++g) {
        for (std::size_t l = 0; l < L; ++l) {
          if (!s.count({g, l})) task.surprising.emplace_back(g, l);
        }
      }
      return task;
    }
  }
  throw Error("could not sample a task covering every value");
}

SyntheticTask make_copy_task(std::size_t n, std::size_t samples_per_value) {
  if (n < 2 || samples_per_value == 0) {
    throw Error("copy task needs n >= 2 and samples");
  }
  SyntheticTask task;
  task.data = {n, n, n, {}};
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t k = 0; k < samples_per_value; ++k) {
      task.data.samples.push_back({v, v, v});
    }
  }
  for (std::size_t g = 0; g < n; ++g) {
    for (std::size_t l = 0; l < n; ++l) {
      if (g != l) task.surprising.emplace_back(g, l);
    }
  }
  return task;
}

PropositionReport verify_proposition(const SyntheticTask& task,
                                     double reg_lambda,
                                     const TrainOptions& options) {
  if (task.surprising.empty()) throw Error("task has no surprising pairs");
  const Dataset& data = task.data;
  const auto full = train_loglinear(data, FeatureSubset::full, reg_lambda, options);
  const auto glob =
      train_loglinear(data, FeatureSubset::global_only, reg_lambda, options);
  const auto loc =
      train_loglinear(data, FeatureSubset::local_only, reg_lambda, options);

  PropositionReport r;
  r.reg_lambda = reg_lambda;
  r.full_stats = full.stats;
  r.global_stats = glob.stats;
  r.local_stats = loc.stats;
  const double tol = options.tolerance;
  r.lemma_global = verify_lemma(full, glob, data, tol);
  r.lemma_local = verify_lemma(full, loc, data, tol);
  if (!r.lemma_global.pass()) {
    r.failures.push_back("global-only weights: " +
                         r.lemma_global.describe_failure());
  }
  if (!r.lemma_local.pass()) {
    r.failures.push_back("local-only weights: " +
                         r.lemma_local.describe_failure());
  }

  const EpsilonReport eps_g = measure_epsilon(full, glob, data);
  const EpsilonReport eps_l = measure_epsilon(full, loc, data);
  std::size_t half_violations = 0, context_violations = 0;
  for (const auto& [g, l] : task.surprising) {
    const FeatureKey gk{FeatureKind::global, g, 0};
    const FeatureKey lk{FeatureKind::local, 0, l};
    const double e = std::max(eps_g.epsilon(gk), eps_l.epsilon(lk));
    const double e_ctx =
        std::max(eps_g.epsilon(gk, true), eps_l.epsilon(lk, true));
    const auto p = full.predict(g, l);
    const auto q = product_of_experts(glob.predict(g, 0), loc.predict(0, l));
    double dev = 0.0;
    for (std::size_t y = 0; y < p.size(); ++y) {
      dev = std::max(dev, std::abs(p[y] - q[y]));
    }
    PairCheck pc{g, l, e, proposition_bound(e + tol * 2.0, reg_lambda), dev};
    r.pairs.push_back(pc);
    r.max_deviation = std::max(r.max_deviation, dev);
    r.epsilon = std::max(r.epsilon, e);
    r.epsilon_per_context = std::max(r.epsilon_per_context, e_ctx);
    if (dev > pc.bound) {
      r.failures.push_back("pair (" + std::to_string(g) + ", " +
                           std::to_string(l) + "): deviation " + fmt(dev) +
                           " exceeds bound " + fmt(pc.bound));
    }
    if (dev > proposition_bound(e + tol * 2.0, reg_lambda, 2.0)) {
      ++half_violations;
    }
    if (dev > proposition_bound(e_ctx + tol * 2.0, reg_lambda)) {
      ++context_violations;
    }
  }
  r.bound_exponent = 4.0 * r.epsilon / reg_lambda;
  r.bound = proposition_bound(r.epsilon, reg_lambda);

  context_violations +=
      verify_lemma(full, glob, data, tol, Mutation::per_context_epsilon)
          .violations.size() +
      verify_lemma(full, loc, data, tol, Mutation::per_context_epsilon)
          .violations.size();
  r.mutations = {{Mutation::half_exponent, half_violations},
                 {Mutation::per_context_epsilon, context_violations}};
  return r;
}

std::size_t SweepReport::num_failed() const {
  return static_cast<std::size_t>(
      std::count_if(trials.begin(), trials.end(),
                    [](const Trial& t) { return !t.report.pass(); }));
}

std::size_t SweepReport::num_detected(Mutation m) const {
  std::size_t n = 0;
  for (const auto& t : trials) {
    for (const auto& o : t.report.mutations) {
      if (o.mutation == m && o.violations > 0) {
        ++n;
        break;
      }
    }
  }
  return n;
}

SweepReport run_sweep(const SweepOptions& options) {
  if (options.lambdas.empty() || options.num_tasks == 0) {
    throw Error("theory sweep needs lambdas and tasks");
  }
  SweepReport out;
  out.options = options;
  for (std::size_t t = 0; t < options.num_tasks; ++t) {
    const std::uint64_t task_seed = derive_seed(options.seed, "theory-task", t);
    const SyntheticTask task = make_synthetic_task(options.task, task_seed);
    for (double lambda : options.lambdas) {
      out.trials.push_back(
          {t, task_seed, verify_proposition(task, lambda, options.train)});
    }
  }
  return out;
}

nlohmann::json to_json(const PropositionReport& r) {
  nlohmann::json mutations = nlohmann::json::object();
  for (const auto& m : r.mutations) mutations[to_string(m.mutation)] = m.violations;
  return {{"lambda", r.reg_lambda},
          {"epsilon", r.epsilon},
          {"epsilon_per_context", r.epsilon_per_context},
          {"bound", finite_or_null(r.bound)},
          {"bound_exponent", r.bound_exponent},
          {"max_deviation", r.max_deviation},
          {"num_pairs", r.pairs.size()},
          {"lemma_global", lemma_json(r.lemma_global)},
          {"lemma_local", lemma_json(r.lemma_local)},
          {"iterations",
           {r.full_stats.iterations, r.global_stats.iterations,
            r.local_stats.iterations}},
          {"mutation_violations", mutations},
          {"failures", r.failures},
          {"pass", r.pass()}};
}

namespace {

void check_keys(const nlohmann::json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error(path + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; })) {
      throw Error(path + "." + key + ": unknown field");
    }
  }
}

template <typename T>
T field(const nlohmann::json& j, const std::string& path, const char* key,
        std::optional<T> fallback = std::nullopt) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw Error(path + "." + key + ": missing required field");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + "." + key + ": " + e.what());
  }
}

}  // namespace

SweepOptions sweep_options_from_json(const nlohmann::json& j) {
  const std::string root = "config";
  check_keys(j, root, {"lambdas", "num_tasks", "seed", "task", "train"});
  SweepOptions o;
  o.lambdas = field<std::vector<double>>(j, root, "lambdas");
  if (o.lambdas.empty()) throw Error("config.lambdas: must not be empty");
  for (double l : o.lambdas) {
    if (!(l > 0.0)) throw Error("config.lambdas: values must be positive");
  }
  o.num_tasks = field<std::size_t>(j, root, "num_tasks");
  o.seed = field<std::uint64_t>(j, root, "seed", o.seed);
  if (j.contains("task")) {
    const auto& t = j.at("task");
    const std::string path = root + ".task";
    check_keys(t, path, {"num_global", "num_local", "num_classes", "num_samples",
                         "pair_density", "logit_scale"});
    auto& d = o.task;
    d.num_global = field<std::size_t>(t, path, "num_global", d.num_global);
    d.num_local = field<std::size_t>(t, path, "num_local", d.num_local);
    d.num_classes = field<std::size_t>(t, path, "num_classes", d.num_classes);
    d.num_samples = field<std::size_t>(t, path, "num_samples", d.num_samples);
    d.pair_density = field<double>(t, path, "pair_density", d.pair_density);
    d.logit_scale = field<double>(t, path, "logit_scale", d.logit_scale);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    const std::string path = root + ".train";
    check_keys(t, path, {"tolerance", "max_iterations", "history"});
    auto& d = o.train;
    d.tolerance = field<double>(t, path, "tolerance", d.tolerance);
    d.max_iterations = field<std::size_t>(t, path, "max_iterations", d.max_iterations);
    d.history = field<std::size_t>(t, path, "history", d.history);
  }
  return o;
}

nlohmann::json to_json(const SweepOptions& o) {
  return {{"lambdas", o.lambdas},
          {"num_tasks", o.num_tasks},
          {"seed", o.seed},
          {"task",
           {{"num_global", o.task.num_global},
            {"num_local", o.task.num_local},
            {"num_classes", o.task.num_classes},
            {"num_samples", o.task.num_samples},
            {"pair_density", o.task.pair_density},
            {"logit_scale", o.task.logit_scale}}},
          {"train",
           {{"tolerance", o.train.tolerance},
            {"max_iterations", o.train.max_iterations},
            {"history", o.train.history}}}};
}

nlohmann::json to_json(const SweepReport& report) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : report.trials) {
    auto j = to_json(t.report);
    j["task"] = t.task_index;
    j["task_seed"] = t.task_seed;
    trials.push_back(std::move(j));
  }
  return {{"options", to_json(report.options)},
          {"trials", trials},
          {"num_failed", report.num_failed()},
          {"mutation_detected",
           {{"half_exponent", report.num_detected(Mutation::half_exponent)},
            {"per_context_epsilon",
             report.num_detected(Mutation::per_context_epsilon)}}}};
}

std::string to_csv(const SweepReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "task,lambda,epsilon,epsilon_per_context,bound_exponent,max_deviation,"
        "pass\n";
  for (const auto& t : report.trials) {
    const auto& r = t.report;
    os << t.task_index << ',' << r.reg_lambda << ',' << r.epsilon << ','
       << r.epsilon_per_context << ',' << r.bound_exponent << ','
       << r.max_deviation << ',' << (r.pass() ? "true" : "false") << '\n';
  }
  return os.str();
}

}  // namespace locglob::theory
