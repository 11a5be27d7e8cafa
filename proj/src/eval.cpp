// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include "locglob/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace locglob::eval {

using hypotheses::Hypothesis;
using hypotheses::Kind;
using hypotheses::Source;

namespace {

void check_support(const CategoricalDist& p, const CategoricalDist& q) {
  if (p.size() != q.size()) {
    throw Error("distributions over different supports (" +
                std::to_string(p.size()) + " vs " + std::to_string(q.size()) +
                ")");
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string csv_field(const nlohmann::json& v) {
  std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  if (s.find_first_of(",\"\n") != std::string::npos) {
    std::string quoted = "\"";
    for (char c : s) {
      if (c == '"') quoted += '"';
      quoted += c;
    }
    return quoted + "\"";
  }
  return s;
}

}  // namespace

double tv_distance(const CategoricalDist& p, const CategoricalDist& q) {
  check_support(p, q);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return std::min(1.0, 0.5 * s);
}

double jsd(const CategoricalDist& p, const CategoricalDist& q) {
  check_support(p, q);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) s += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) s += 0.5 * q[i] * std::log2(q[i] / m);
  }
  return std::clamp(s, 0.0, 1.0);
}

std::string to_string(Metric m) { return m == Metric::tv ? "tv" : "jsd"; }

Metric metric_from_string(const std::string& s) {
  if (s == "tv") return Metric::tv;
  if (s == "jsd") return Metric::jsd;
  throw Error("unknown metric '" + s + "' (expected tv or jsd)");
}

double distance(Metric m, const CategoricalDist& p, const CategoricalDist& q) {
  return m == Metric::tv ? tv_distance(p, q) : jsd(p, q);
}

double err(std::span<const CategoricalDist> hypothesis,
           std::span<const CategoricalDist> model, Metric m) {
  if (hypothesis.empty()) throw Error("err needs at least one context");
  if (hypothesis.size() != model.size()) {
    throw Error("err inputs differ in length");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    s += distance(m, hypothesis[i], model[i]);
  }
  return s / static_cast<double>(model.size());
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

const HypothesisRow* HypothesisReport::find(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const HypothesisRow& HypothesisReport::row(const std::string& name) const {
  const HypothesisRow* r = find(name);
  if (!r) throw Error("report has no row '" + name + "'");
  return *r;
}

bool HypothesisReport::complete() const {
  return std::all_of(rows.begin(), rows.end(),
                     [](const HypothesisRow& r) { return r.ok(); });
}

HypothesisReport evaluate_suite(const SuiteInput& input) {
  if (input.hypotheses.empty()) throw Error("suite has no hypotheses");
  if (input.contexts.empty()) throw Error("suite has no contexts");
  if (input.seeds.empty()) throw Error("suite has no seeds");
  for (const auto& s : input.seeds) {
    if (!s.lm) throw Error("seed " + std::to_string(s.seed) + " has no model");
  }
  const auto& contexts = input.contexts;
  const std::size_t n = contexts.size();

  HypothesisReport report;
  report.metadata = input.metadata;
  report.num_contexts = n;
  report.metric = to_string(input.metric);
  for (const auto& s : input.seeds) report.seeds.push_back(s.seed);

  std::vector<std::vector<CategoricalDist>> targets;
  for (const auto& s : input.seeds) {
    auto& t = targets.emplace_back();
    for (const auto& c : contexts) t.push_back(s.lm->next_dist(c.full_context()));
  }

  // Seed-independent base estimates, computed once per source.
  std::map<std::pair<int, std::size_t>, std::vector<CategoricalDist>> globals;
  std::map<int, std::vector<CategoricalDist>> locals;
  auto local_of = [&](Source src) -> const std::vector<CategoricalDist>& {
    auto it = locals.find(static_cast<int>(src));
    if (it != locals.end()) return it->second;
    std::vector<CategoricalDist> v;
    for (const auto& c : contexts) {
      v.push_back(hypotheses::hyp_local(c, src, input.shared));
    }
    return locals.emplace(static_cast<int>(src), std::move(v)).first->second;
  };
  auto global_of = [&](Source src,
                       std::size_t beam) -> const std::vector<CategoricalDist>& {
    const auto key = std::make_pair(static_cast<int>(src),
                                    src == Source::beam_lm ? beam : 0);
    auto it = globals.find(key);
    if (it != globals.end()) return it->second;
    std::vector<CategoricalDist> v;
    for (const auto& c : contexts) {
      v.push_back(hypotheses::hyp_global(c, src, input.shared, beam));
    }
    return globals.emplace(key, std::move(v)).first->second;
  };

  for (const Hypothesis& h : input.hypotheses) {
    HypothesisRow row;
    row.name = h.name();
    row.spec = hypotheses::to_json(h);
    try {
      h.validate();
      for (std::size_t si = 0; si < input.seeds.size(); ++si) {
        hypotheses::Sources src = input.shared;
        src.lm = input.seeds[si].lm;
        src.restart_lm = input.seeds[si].restart_lm;
        std::vector<CategoricalDist> outputs;
        const bool interp =
            h.kind == Kind::interp_linear || h.kind == Kind::interp_loglinear;
        if (interp) {
          const auto& loc = local_of(h.local_source);
          const auto& glo = global_of(h.global_source, h.beam_width);
          hypotheses::InterpolationParams params = h.params;
          if (h.fit) {
            const auto family = h.kind == Kind::interp_linear
                                    ? hypotheses::Family::linear
                                    : hypotheses::Family::loglinear;
            auto fit = hypotheses::fit_lambda(
                family, loc, glo, targets[si],
                hypotheses::default_grid_step(family, h.params.tie_mode),
                h.params.tie_mode);
            params = fit.params;
            row.fitted.push_back(params);
            row.grids.push_back(std::move(fit.grid));
          }
          for (std::size_t c = 0; c < n; ++c) {
            outputs.push_back(
                h.kind == Kind::interp_linear
                    ? hypotheses::interp_linear(loc[c], glo[c], params.lambda)
                    : hypotheses::interp_loglinear(loc[c], glo[c],
                                                   params.lambda1,
                                                   params.lambda2));
          }
        } else if (h.kind == Kind::local) {
          outputs = local_of(h.local_source);
        } else if (h.kind == Kind::global) {
          outputs = global_of(h.global_source, h.beam_width);
        } else {
          for (const auto& c : contexts) {
            outputs.push_back(hypotheses::evaluate(h, c, src));
          }
        }
        auto& d = row.distances.emplace_back();
        for (std::size_t c = 0; c < n; ++c) {
          d.push_back(distance(input.metric, outputs[c], targets[si][c]));
        }
        row.acc.push_back(acc_from_err(mean(d)));
      }
      row.mean_acc = mean(row.acc);
      row.std_acc = sample_std(row.acc);
    } catch (const Error& e) {
      row.error = e.what();
      row.acc.clear();
      row.distances.clear();
      row.fitted.clear();
      row.grids.clear();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::vector<Hypothesis> standard_regular_suite() {
  std::vector<Hypothesis> out;
  auto add = [&](Kind k) -> Hypothesis& {
    Hypothesis h;
    h.kind = k;
    out.push_back(h);
    return out.back();
  };
  add(Kind::unigram);
  add(Kind::local);
  add(Kind::global);
  add(Kind::ignore);
  add(Kind::interp_linear).fit = true;
  add(Kind::interp_loglinear).fit = true;
  auto& free = add(Kind::interp_loglinear);
  free.fit = true;
  free.params.tie_mode = hypotheses::TieMode::free;
  add(Kind::restart);
  return out;
}

std::vector<Hypothesis> standard_natural_suite() {
  auto out = standard_regular_suite();
  for (auto& h : out) {
    h.local_source = Source::bigram_counts;
    h.global_source = Source::beam_lm;
  }
  return out;
}

std::string check_consistency(const HypothesisReport& report,
                              double tolerance) {
  for (const auto& r : report.rows) {
    if (!r.ok()) continue;
    if (r.acc.size() != report.seeds.size() ||
        r.distances.size() != report.seeds.size()) {
      return r.name + ": per-seed lists do not match the seed list";
    }
    for (std::size_t s = 0; s < r.acc.size(); ++s) {
      const auto& d = r.distances[s];
      if (d.size() != report.num_contexts) {
        return r.name + ": distance list length differs from num_contexts";
      }
      for (double x : d) {
        if (!(x >= 0.0 && x <= 1.0)) return r.name + ": distance outside [0, 1]";
      }
      if (std::abs(acc_from_err(mean(d)) - r.acc[s]) > tolerance) {
        return r.name + ": acc does not reproduce from distances";
      }
    }
    if (std::abs(mean(r.acc) - r.mean_acc) > tolerance ||
        std::abs(sample_std(r.acc) - r.std_acc) > tolerance) {
      return r.name + ": summary does not reproduce from per-seed acc";
    }
  }
  return {};
}

std::size_t ranking_discordance(const HypothesisReport& a,
                                const HypothesisReport& b) {
  std::vector<std::pair<double, double>> pairs;
  for (const auto& r : a.rows) {
    const HypothesisRow* o = b.find(r.name);
    if (!r.ok() || !o || !o->ok()) continue;
    pairs.emplace_back(r.mean_acc, o->mean_acc);
  }
  std::size_t discordant = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (std::size_t j = i + 1; j < pairs.size(); ++j) {
      const double da = pairs[i].first - pairs[j].first;
      const double db = pairs[i].second - pairs[j].second;
      if (da * db < 0.0) ++discordant;
    }
  }
  return discordant;
}

nlohmann::json to_json(const HypothesisReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row = {{"name", r.name}, {"spec", r.spec}};
    if (!r.ok()) {
      row["error"] = r.error;
      rows.push_back(row);
      continue;
    }
    row["acc"] = r.acc;
    row["mean_acc"] = r.mean_acc;
    row["std_acc"] = r.std_acc;
    row["distances"] = r.distances;
    if (!r.fitted.empty()) {
      auto& fitted = row["fitted"] = nlohmann::json::array();
      for (const auto& p : r.fitted) fitted.push_back(hypotheses::to_json(p));
      auto& grids = row["grids"] = nlohmann::json::array();
      for (const auto& g : r.grids) {
        auto& pts = grids.emplace_back(nlohmann::json::array());
        for (const auto& p : g) pts.push_back({p.lambda1, p.lambda2, p.error});
      }
    }
    rows.push_back(row);
  }
  return {{"metadata", report.metadata},     {"seeds", report.seeds},
          {"num_contexts", report.num_contexts}, {"metric", report.metric},
          {"rows", rows}};
}

HypothesisReport report_from_json(const nlohmann::json& j) {
  HypothesisReport r;
  r.metadata = j.at("metadata");
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.num_contexts = j.at("num_contexts").get<std::size_t>();
  r.metric = j.value("metric", std::string("tv"));
  for (const auto& jr : j.at("rows")) {
    HypothesisRow row;
    row.name = jr.at("name").get<std::string>();
    row.spec = jr.value("spec", nlohmann::json());
    if (jr.contains("error")) {
      row.error = jr.at("error").get<std::string>();
      r.rows.push_back(std::move(row));
      continue;
    }
    row.acc = jr.at("acc").get<std::vector<double>>();
    row.mean_acc = jr.at("mean_acc").get<double>();
    row.std_acc = jr.at("std_acc").get<double>();
    row.distances = jr.at("distances").get<std::vector<std::vector<double>>>();
    if (jr.contains("fitted")) {
      for (const auto& p : jr.at("fitted")) {
        row.fitted.push_back(hypotheses::interpolation_params_from_json(p));
      }
      for (const auto& g : jr.at("grids")) {
        auto& pts = row.grids.emplace_back();
        for (const auto& p : g) {
          pts.push_back({p.at(0).get<double>(), p.at(1).get<double>(),
                         p.at(2).get<double>()});
        }
      }
    }
    r.rows.push_back(std::move(row));
  }
  return r;
}

std::string to_csv(const HypothesisReport& report) {
  const auto& m = report.metadata;
  auto meta = [&](const char* key) {
    return m.contains(key) ? csv_field(m.at(key)) : std::string();
  };
  std::string out = "language,arch,noise,hypothesis,seed,acc\n";
  for (const auto& r : report.rows) {
    if (!r.ok()) continue;
    for (std::size_t s = 0; s < r.acc.size(); ++s) {
      out += meta("language") + "," + meta("arch") + "," + meta("noise") + "," +
             csv_field(r.name) + "," + std::to_string(report.seeds[s]) + "," +
             format_double(r.acc[s]) + "\n";
    }
  }
  return out;
}

}  // namespace locglob::eval
