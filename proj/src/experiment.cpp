// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include "locglob/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>
#include <sstream>

#include "locglob/io.hpp"
#include "locglob/plot.hpp"
#include "locglob/rng.hpp"

namespace locglob::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- schema helpers ---------------------------------------------------------

void reject_unknown(const json& j, const std::string& path,
                    std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; })) {
      throw ConfigError(path + "." + key + ": unknown field");
    }
  }
}

const json& required(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) {
    throw ConfigError(path + "." + key + ": missing required field");
  }
  return j.at(key);
}

template <typename T>
T get_as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

template <typename T>
T optional_field(const json& j, const std::string& path, const char* key,
                 T fallback) {
  if (!j.contains(key)) return fallback;
  return get_as<T>(j.at(key), path + "." + key);
}

// Runs a nested parser, prefixing its errors with the field path.
template <typename F>
auto nested(const std::string& path, F&& parse) -> decltype(parse()) {
  try {
    return parse();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string language_type_string(LanguageType t) {
  return t == LanguageType::dfa ? "dfa" : "corpus";
}

json language_to_json(const LanguageSpec& l) {
  json j = {{"id", l.id}, {"type", language_type_string(l.type)}};
  if (l.type == LanguageType::dfa) {
    auto dfa = automata::to_json(l.dfa);
    dfa.erase("seed");
    j["dfa"] = dfa;
    j["num_train"] = l.num_train;
    j["max_walk_len"] = l.max_walk_len;
  } else {
    j["train_path"] = l.train_path.string();
    if (!l.val_path.empty()) j["val_path"] = l.val_path.string();
    j["vocab_size"] = l.vocab_size;
  }
  j["num_val"] = l.num_val;
  return j;
}

LanguageSpec language_from_json(const json& j, const std::string& path,
                                 std::size_t index) {
  reject_unknown(j, path,
                 {"id", "type", "dfa", "num_train", "num_val", "max_walk_len",
                  "train_path", "val_path", "vocab_size"});
  LanguageSpec l;
  l.id = optional_field<std::string>(j, path, "id",
                                     "lang" + std::to_string(index));
  const auto type = optional_field<std::string>(j, path, "type", "dfa");
  if (type == "dfa") {
    l.type = LanguageType::dfa;
  } else if (type == "corpus") {
    l.type = LanguageType::corpus;
  } else {
    throw ConfigError(path + ".type: expected dfa or corpus, got '" + type +
                      "'");
  }
  if (j.contains("dfa")) {
    if (l.type != LanguageType::dfa) {
      throw ConfigError(path + ".dfa: only valid for type dfa");
    }
    const auto& d = j.at("dfa");
    if (d.is_object() && d.contains("seed")) {
      throw ConfigError(path + ".dfa.seed: derived from the experiment seed");
    }
    l.dfa = nested(path + ".dfa", [&] { return automata::dfa_config_from_json(d); });
  }
  l.num_train = optional_field<std::size_t>(j, path, "num_train", l.num_train);
  l.num_val = optional_field<std::size_t>(j, path, "num_val", l.num_val);
  l.max_walk_len =
      optional_field<std::size_t>(j, path, "max_walk_len", l.max_walk_len);
  l.vocab_size = optional_field<std::size_t>(j, path, "vocab_size", 0);
  if (l.type == LanguageType::corpus) {
    l.train_path = get_as<std::string>(required(j, path, "train_path"),
                                       path + ".train_path");
    l.val_path = optional_field<std::string>(j, path, "val_path", "");
  } else if (j.contains("train_path") || j.contains("val_path")) {
    throw ConfigError(path + ".train_path: only valid for type corpus");
  }
  return l;
}

std::vector<std::uint64_t> seeds_from_json(const json& j,
                                           const std::string& path) {
  auto seeds = get_as<std::vector<std::uint64_t>>(j, path);
  if (seeds.empty()) throw ConfigError(path + ": must not be empty");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) {
    throw ConfigError(path + ": duplicate seed");
  }
  return seeds;
}

NoiseSetting noise_from_json(const json& j, const std::string& path) {
  reject_unknown(j, path, {"kind", "p"});
  NoiseSetting n;
  n.kind = nested(path + ".kind", [&] {
    return noise_kind_from_string(
        get_as<std::string>(required(j, path, "kind"), path + ".kind"));
  });
  n.p = optional_field<double>(j, path, "p", 0.0);
  if (n.kind == NoiseKind::none && n.p != 0.0) {
    throw ConfigError(path + ".p: must be 0 for kind none");
  }
  if (n.kind != NoiseKind::none && !(n.p > 0.0 && n.p < 1.0)) {
    throw ConfigError(path + ".p: must lie in (0, 1)");
  }
  return n;
}

ModelSpec model_from_json(const json& j, const std::string& path) {
  reject_unknown(j, path, {"id", "config", "train", "seeds", "noise"});
  ModelSpec m;
  auto cfg = required(j, path, "config");
  if (cfg.is_object() && cfg.contains("vocab_size")) {
    throw ConfigError(path + ".config.vocab_size: taken from the language");
  }
  if (cfg.is_object()) cfg["vocab_size"] = 1;  // replaced per language
  m.config = nested(path + ".config", [&] { return lm::lm_config_from_json(cfg); });
  m.id = optional_field<std::string>(j, path, "id", lm::to_string(m.config.arch));
  if (j.contains("train")) {
    m.train = nested(path + ".train",
                     [&] { return lm::train_config_from_json(j.at("train")); });
  }
  if (j.contains("seeds")) m.seeds = seeds_from_json(j.at("seeds"), path + ".seeds");
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    if (!n.is_array() || n.empty()) {
      throw ConfigError(path + ".noise: expected a non-empty array");
    }
    m.noise.emplace();
    for (std::size_t i = 0; i < n.size(); ++i) {
      m.noise->push_back(
          noise_from_json(n[i], path + ".noise[" + std::to_string(i) + "]"));
    }
  }
  return m;
}

json model_to_json(const ModelSpec& m) {
  auto cfg = lm::to_json(m.config);
  cfg.erase("vocab_size");
  json j = {{"id", m.id}, {"config", cfg}};
  if (m.train) j["train"] = lm::to_json(*m.train);
  if (m.seeds) j["seeds"] = *m.seeds;
  if (m.noise) {
    auto& n = j["noise"] = json::array();
    for (const auto& x : *m.noise) n.push_back({{"kind", to_string(x.kind)}, {"p", x.p}});
  }
  return j;
}

std::string format_p(double p) {
  std::ostringstream os;
  os << p;
  return os.str();
}

std::string csv_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// --- manifests ----------------------------------------------------------------

bool manifest_matches(const fs::path& manifest, const json& key) {
  if (!fs::exists(manifest)) return false;
  try {
    const auto j = io::read_json(manifest);
    return j.contains("key") && j.at("key") == key;
  } catch (const std::exception&) {
    return false;
  }
}

std::vector<TokenSeq> read_sequences(const fs::path& path,
                                     std::size_t* vocab = nullptr) {
  auto file = corpus::read_token_file(path);
  if (vocab && file.header.is_object() && file.header.contains("vocab_size")) {
    *vocab = file.header.at("vocab_size").get<std::size_t>();
  }
  return std::move(file.sequences);
}

std::size_t infer_vocab(std::span<const TokenSeq> seqs) {
  Token mx = 0;
  bool any = false;
  for (const auto& s : seqs) {
    for (Token t : s.tokens) {
      mx = std::max(mx, t);
      any = true;
    }
  }
  if (!any) throw Error("corpus contains no tokens");
  return static_cast<std::size_t>(mx) + 1;
}

bool is_complementary_loglinear(const eval::HypothesisRow& row) {
  return row.spec.is_object() && row.spec.value("kind", "") == "interp_loglinear" &&
         row.spec.value("fit", false) && row.spec.contains("params") &&
         row.spec.at("params").value("tie_mode", "") == "complementary";
}

}  // namespace

// --- config -------------------------------------------------------------------

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::token_swap: return "token_swap";
    case NoiseKind::state_dropout: return "state_dropout";
  }
  return "none";
}

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "none") return NoiseKind::none;
  if (s == "token_swap") return NoiseKind::token_swap;
  if (s == "state_dropout") return NoiseKind::state_dropout;
  throw Error("unknown noise kind '" + s +
              "' (expected none, token_swap or state_dropout)");
}

std::string NoiseSetting::id() const {
  if (kind == NoiseKind::none) return "none";
  return to_string(kind) + "-" + format_p(p);
}

lm::NoiseConfig NoiseSetting::config() const {
  lm::NoiseConfig c;
  if (kind == NoiseKind::token_swap) c.token_swap_prob = p;
  if (kind == NoiseKind::state_dropout) c.state_dropout_prob = p;
  return c;
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name: must not be empty");
  if (languages.empty()) throw ConfigError("languages: must not be empty");
  if (models.empty()) throw ConfigError("models: must not be empty");
  if (noise.empty()) throw ConfigError("noise: must not be empty");
  if (hypotheses.empty() && !standard_hypotheses) {
    throw ConfigError("hypotheses: must not be empty");
  }
  if (num_contexts == 0) throw ConfigError("num_contexts: must be positive");
  if (seeds.empty()) throw ConfigError("seeds: must not be empty");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < languages.size(); ++i) {
    const auto& l = languages[i];
    const std::string path = "languages[" + std::to_string(i) + "]";
    if (l.id.empty() || !ids.insert(l.id).second) {
      throw ConfigError(path + ".id: empty or duplicate");
    }
    if (l.type == LanguageType::dfa && l.num_train == 0) {
      throw ConfigError(path + ".num_train: must be positive");
    }
    if (l.num_val == 0) throw ConfigError(path + ".num_val: must be positive");
  }
  ids.clear();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const std::string path = "models[" + std::to_string(i) + "]";
    if (models[i].id.empty() || !ids.insert(models[i].id).second) {
      throw ConfigError(path + ".id: empty or duplicate");
    }
    nested(path + ".config", [&] {
      models[i].config.validate();
      return 0;
    });
    nested(path + ".train", [&] {
      train_for(models[i]).validate();
      return 0;
    });
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (!models[i].noise) continue;
    for (const auto& n : *models[i].noise) {
      if (std::find(noise.begin(), noise.end(), n) == noise.end()) {
        throw ConfigError("models[" + std::to_string(i) + "].noise: " + n.id() +
                          " is not in the noise sweep");
      }
    }
  }
  if (!helper_model.empty() && !ids.contains(helper_model)) {
    throw ConfigError("helper_model: no model with id '" + helper_model + "'");
  }
  std::set<std::string> noise_ids;
  for (const auto& n : noise) {
    if (!noise_ids.insert(n.id()).second) {
      throw ConfigError("noise: duplicate setting " + n.id());
    }
  }
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    nested("hypotheses[" + std::to_string(i) + "]", [&] {
      hypotheses[i].validate();
      return 0;
    });
  }
}

const std::vector<std::uint64_t>& ExperimentConfig::seeds_for(
    const ModelSpec& m) const {
  return m.seeds ? *m.seeds : seeds;
}

lm::TrainConfig ExperimentConfig::train_for(const ModelSpec& m) const {
  return m.train ? *m.train : train;
}

const std::vector<NoiseSetting>& ExperimentConfig::noise_for(
    const ModelSpec& m) const {
  return m.noise ? *m.noise : noise;
}

std::vector<hypotheses::Hypothesis> ExperimentConfig::hypotheses_for(
    const LanguageSpec& lang) const {
  if (!standard_hypotheses) return hypotheses;
  return lang.type == LanguageType::dfa ? eval::standard_regular_suite()
                                        : eval::standard_natural_suite();
}

ExperimentConfig config_from_json(const json& j) {
  const std::string root = "config";
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  reject_unknown(j, root,
                 {"name", "seed", "languages", "models", "train", "noise",
                  "hypotheses", "num_contexts", "seeds", "natural",
                  "helper_model", "metric", "output_dir"});
  ExperimentConfig c;
  c.name = get_as<std::string>(required(j, root, "name"), "name");
  c.seed = get_as<std::uint64_t>(required(j, root, "seed"), "seed");

  const auto& langs = required(j, root, "languages");
  if (!langs.is_array()) throw ConfigError("languages: expected an array");
  for (std::size_t i = 0; i < langs.size(); ++i) {
    c.languages.push_back(language_from_json(
        langs[i], "languages[" + std::to_string(i) + "]", i));
  }

  const auto& models = required(j, root, "models");
  if (!models.is_array()) throw ConfigError("models: expected an array");
  for (std::size_t i = 0; i < models.size(); ++i) {
    c.models.push_back(
        model_from_json(models[i], "models[" + std::to_string(i) + "]"));
  }

  if (j.contains("train")) {
    c.train = nested("train", [&] { return lm::train_config_from_json(j.at("train")); });
  }
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    if (!n.is_array()) throw ConfigError("noise: expected an array");
    c.noise.clear();
    for (std::size_t i = 0; i < n.size(); ++i) {
      c.noise.push_back(noise_from_json(n[i], "noise[" + std::to_string(i) + "]"));
    }
  }

  const auto& hyps = required(j, root, "hypotheses");
  if (hyps.is_string()) {
    if (hyps.get<std::string>() != "standard") {
      throw ConfigError("hypotheses: expected a list or \"standard\"");
    }
    c.standard_hypotheses = true;
  } else if (hyps.is_array()) {
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      const std::string path = "hypotheses[" + std::to_string(i) + "]";
      c.hypotheses.push_back(
          nested(path, [&] { return hypotheses::hypothesis_from_json(hyps[i]); }));
    }
  } else {
    throw ConfigError("hypotheses: expected a list or \"standard\"");
  }

  c.num_contexts = optional_field<std::size_t>(j, root, "num_contexts", c.num_contexts);
  if (j.contains("seeds")) c.seeds = seeds_from_json(j.at("seeds"), "seeds");
  if (j.contains("natural")) {
    const auto& n = j.at("natural");
    reject_unknown(n, "natural", {"top_k", "num_contexts", "max_retries"});
    c.natural.top_k = optional_field<std::size_t>(n, "natural", "top_k", c.natural.top_k);
    c.natural.max_retries =
        optional_field<std::size_t>(n, "natural", "max_retries", c.natural.max_retries);
    if (n.contains("num_contexts")) {
      throw ConfigError("natural.num_contexts: use the top-level num_contexts");
    }
  }
  c.natural.num_contexts = c.num_contexts;
  c.helper_model = optional_field<std::string>(j, root, "helper_model", "");
  c.metric = nested("metric", [&] {
    return eval::metric_from_string(optional_field<std::string>(j, root, "metric", "tv"));
  });
  c.output_dir = optional_field<std::string>(j, root, "output_dir", "runs/" + c.name);
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  auto& langs = j["languages"] = json::array();
  for (const auto& l : c.languages) langs.push_back(language_to_json(l));
  auto& models = j["models"] = json::array();
  for (const auto& m : c.models) models.push_back(model_to_json(m));
  j["train"] = lm::to_json(c.train);
  auto& noise = j["noise"] = json::array();
  for (const auto& n : c.noise) noise.push_back({{"kind", to_string(n.kind)}, {"p", n.p}});
  if (c.standard_hypotheses) {
    j["hypotheses"] = "standard";
  } else {
    auto& hyps = j["hypotheses"] = json::array();
    for (const auto& h : c.hypotheses) hyps.push_back(hypotheses::to_json(h));
  }
  j["num_contexts"] = c.num_contexts;
  j["seeds"] = c.seeds;
  j["natural"] = {{"top_k", c.natural.top_k}, {"max_retries", c.natural.max_retries}};
  if (!c.helper_model.empty()) j["helper_model"] = c.helper_model;
  j["metric"] = eval::to_string(c.metric);
  j["output_dir"] = c.output_dir.string();
  return j;
}

ExperimentConfig load_config(const fs::path& path) {
  return config_from_json(io::read_json(path));
}

fs::path resolve_output_dir(const fs::path& dir) {
  if (dir.is_absolute()) return dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) {
    return fs::path(root) / dir;
  }
  return dir;
}

// --- seeds ----------------------------------------------------------------------

std::uint64_t language_seed(std::uint64_t experiment_seed, std::size_t index) {
  return derive_seed(experiment_seed, "language", index);
}
std::uint64_t dfa_seed(std::uint64_t lang) { return derive_seed(lang, "dfa"); }
std::uint64_t walk_seed(std::uint64_t lang, std::string_view split) {
  return derive_seed(derive_seed(lang, "walks"), split);
}
std::uint64_t context_seed(std::uint64_t lang) {
  return derive_seed(lang, "contexts");
}
std::uint64_t model_seed(std::uint64_t lang, std::uint64_t seed) {
  return derive_seed(lang, "model", seed);
}
std::uint64_t helper_seed(std::uint64_t lang) {
  return derive_seed(lang, "helper");
}

// --- artifacts ------------------------------------------------------------------

Language prepare_language(const LanguageSpec& spec, std::uint64_t seed,
                          const fs::path& dir) {
  Language lang;
  lang.spec = spec;
  lang.seed = seed;
  json key = {{"code_version", kCodeVersion},
              {"language", language_to_json(spec)},
              {"seed", seed}};
  const fs::path manifest = dir / "manifest.json";

  if (spec.type == LanguageType::dfa) {
    auto dfa_config = spec.dfa;
    dfa_config.seed = dfa_seed(seed);
    lang.vocab_size = dfa_config.alphabet_size;
    if (manifest_matches(manifest, key)) {
      lang.dfa = automata::dfa_from_json(io::read_json(dir / "dfa.json"));
      lang.train = read_sequences(dir / "train.txt");
      lang.val = read_sequences(dir / "val.txt");
    } else {
      lang.dfa = automata::generate_dfa(dfa_config);
      lang.train = automata::sample_corpus(*lang.dfa, spec.num_train,
                                           walk_seed(seed, "train"),
                                           spec.max_walk_len);
      lang.val = automata::sample_corpus(*lang.dfa, spec.num_val,
                                         walk_seed(seed, "val"), spec.max_walk_len);
      const json meta = {{"language", spec.id}, {"seed", seed}};
      io::write_json(dir / "dfa.json", automata::to_json(*lang.dfa));
      corpus::write_token_file(dir / "train.txt", lang.train, lang.vocab_size,
                               meta);
      corpus::write_token_file(dir / "val.txt", lang.val, lang.vocab_size, meta);
      json m = {{"key", key},
                {"dfa_config", automata::to_json(dfa_config)},
                {"files",
                 {{"dfa.json", io::file_digest(dir / "dfa.json")},
                  {"train.txt", io::file_digest(dir / "train.txt")},
                  {"val.txt", io::file_digest(dir / "val.txt")}}}};
      io::write_json(manifest, m);
    }
    lang.occupancy = automata::occupancy_measure(*lang.dfa);
  } else {
    std::size_t vocab = spec.vocab_size;
    std::size_t header_vocab = 0;
    auto all = read_sequences(spec.train_path, &header_vocab);
    if (spec.val_path.empty()) {
      if (all.size() <= spec.num_val) {
        throw Error(spec.train_path.string() + ": " + std::to_string(all.size()) +
                    " sequences cannot hold out " + std::to_string(spec.num_val));
      }
      const auto cut = all.end() - static_cast<std::ptrdiff_t>(spec.num_val);
      lang.val.assign(cut, all.end());
      all.erase(cut, all.end());
    } else {
      lang.val = read_sequences(spec.val_path);
    }
    lang.train = std::move(all);
    if (vocab == 0) vocab = header_vocab;
    if (vocab == 0) {
      vocab = std::max(infer_vocab(lang.train), infer_vocab(lang.val));
    }
    lang.vocab_size = vocab;
    json m = {{"key", key},
              {"vocab_size", vocab},
              {"train_hash", hex64(hash_sequences(lang.train))},
              {"val_hash", hex64(hash_sequences(lang.val))}};
    io::write_json(manifest, m);
  }
  lang.counts = corpus::count_corpus(lang.train, lang.vocab_size);
  return lang;
}

lm::TrainedLm train_or_load(const fs::path& path,
                            std::span<const TokenSeq> corpus,
                            const lm::LmConfig& config,
                            const lm::TrainConfig& train, bool* trained) {
  const json key = {{"code_version", kCodeVersion},
                    {"config", lm::to_json(config)},
                    {"train", lm::to_json(train)},
                    {"corpus_hash", hex64(hash_sequences(corpus))}};
  auto manifest = path;
  manifest += ".json";
  if (fs::exists(path) && manifest_matches(manifest, key)) {
    if (trained) *trained = false;
    return lm::TrainedLm::load(path);
  }
  auto model = lm::train_lm(corpus, config, train);
  model.save(path);
  io::write_json(manifest, {{"key", key},
                            {"steps", model.provenance().steps},
                            {"final_loss", model.provenance().final_loss},
                            {"digest", io::file_digest(path)}});
  if (trained) *trained = true;
  return model;
}

std::vector<SweepPoint> lambda_sweep(const eval::HypothesisReport& report) {
  for (const auto& row : report.rows) {
    if (!row.ok() || !is_complementary_loglinear(row) || row.grids.empty()) {
      continue;
    }
    std::vector<SweepPoint> out;
    const auto& first = row.grids.front();
    for (std::size_t i = 0; i < first.size(); ++i) {
      double acc = 0.0;
      for (const auto& g : row.grids) {
        if (g.size() != first.size()) throw Error("grids differ across seeds");
        acc += eval::acc_from_err(g[i].error);
      }
      out.push_back({first[i].lambda1, acc / static_cast<double>(row.grids.size())});
    }
    return out;
  }
  return {};
}

eval::HypothesisReport pool_reports(std::span<const eval::HypothesisReport> reports,
                                    json metadata) {
  if (reports.empty()) throw Error("pool_reports: nothing to pool");
  eval::HypothesisReport out;
  out.metadata = std::move(metadata);
  out.seeds = reports.front().seeds;
  out.metric = reports.front().metric;
  for (const auto& r : reports) {
    if (r.seeds != out.seeds) throw Error("pool_reports: seed lists differ");
    if (r.rows.size() != reports.front().rows.size()) {
      throw Error("pool_reports: hypothesis lists differ");
    }
    out.num_contexts += r.num_contexts;
  }
  const std::size_t S = out.seeds.size();
  for (std::size_t i = 0; i < reports.front().rows.size(); ++i) {
    eval::HypothesisRow row;
    row.name = reports.front().rows[i].name;
    row.spec = reports.front().rows[i].spec;
    row.distances.assign(S, {});
    bool with_grid = true;
    for (const auto& r : reports) {
      const auto& src = r.rows[i];
      if (src.name != row.name) throw Error("pool_reports: hypothesis lists differ");
      if (!src.ok()) {
        row.error = src.error;
        break;
      }
      for (std::size_t s = 0; s < S; ++s) {
        row.distances[s].insert(row.distances[s].end(), src.distances[s].begin(),
                                src.distances[s].end());
      }
      with_grid = with_grid && src.grids.size() == S;
    }
    if (!row.ok()) {
      row.distances.clear();
      out.rows.push_back(std::move(row));
      continue;
    }
    for (const auto& d : row.distances) {
      row.acc.push_back(eval::acc_from_err(eval::mean(d)));
    }
    row.mean_acc = eval::mean(row.acc);
    row.std_acc = eval::sample_std(row.acc);
    if (with_grid) {
      // Context-weighted mean of the per-language grid errors.
      row.grids = reports.front().rows[i].grids;
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t g = 0; g < row.grids[s].size(); ++g) {
          double total = 0.0;
          for (const auto& r : reports) {
            const auto& grid = r.rows[i].grids[s];
            if (grid.size() != row.grids[s].size()) {
              throw Error("pool_reports: grids differ across reports");
            }
            total += grid[g].error * static_cast<double>(r.num_contexts);
          }
          row.grids[s][g].error = total / static_cast<double>(out.num_contexts);
        }
      }
      row.fitted = reports.front().rows[i].fitted;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

// --- pipeline -------------------------------------------------------------------

namespace {

std::string report_key(const std::string& lang, const std::string& model,
                       const std::string& noise) {
  return lang + "/" + model + "/" + noise;
}

json sweep_json(const std::vector<SweepPoint>& sweep) {
  json out = json::array();
  for (const auto& p : sweep) out.push_back({p.lambda1, p.acc});
  return out;
}

void note(Progress* progress, const std::string& text) {
  if (progress) progress->message(text);
}

std::vector<automata::SurprisingContext> load_contexts(const fs::path& path) {
  std::vector<automata::SurprisingContext> out;
  const auto doc = io::read_json(path);
  for (const auto& c : doc.at("contexts")) {
    out.push_back(automata::surprising_context_from_json(c));
  }
  return out;
}

void save_contexts(const fs::path& path, const json& key,
                   std::span<const automata::SurprisingContext> contexts) {
  json arr = json::array();
  for (const auto& c : contexts) arr.push_back(automata::to_json(c));
  io::write_json(path, {{"key", key}, {"contexts", arr}});
}

bool needs_helper(const std::vector<hypotheses::Hypothesis>& hyps) {
  return std::any_of(hyps.begin(), hyps.end(), [](const auto& h) {
    return h.global_source == hypotheses::Source::beam_lm &&
           (h.kind == hypotheses::Kind::global ||
            h.kind == hypotheses::Kind::interp_linear ||
            h.kind == hypotheses::Kind::interp_loglinear);
  });
}

}  // namespace

SuiteResult run_suite(const ExperimentConfig& config, Progress* progress) {
  config.validate();
  SuiteResult result;
  result.output_dir = resolve_output_dir(config.output_dir);
  const fs::path out = result.output_dir;
  fs::create_directories(out);
  io::write_json(out / "config.json", to_json(config));

  const ModelSpec& helper_spec = [&]() -> const ModelSpec& {
    for (const auto& m : config.models) {
      if (m.id == config.helper_model) return m;
    }
    return config.models.front();
  }();

  // (model, noise) -> per-language reports, in language order.
  std::map<std::string, std::vector<eval::HypothesisReport>> by_model_noise;
  json sweeps = json::object();

  for (std::size_t li = 0; li < config.languages.size(); ++li) {
    const auto& spec = config.languages[li];
    const std::uint64_t lseed = language_seed(config.seed, li);
    const fs::path lang_dir = out / "languages" / spec.id;
    note(progress, "language " + spec.id);
    const Language lang = prepare_language(spec, lseed, lang_dir);
    const auto hyps = config.hypotheses_for(spec);

    std::optional<lm::TrainedLm> helper;
    auto get_helper = [&]() -> const lm::TrainedLm& {
      if (!helper) {
        auto cfg = helper_spec.config;
        cfg.vocab_size = lang.vocab_size;
        auto train = config.train_for(helper_spec);
        train.seed = helper_seed(lseed);
        train.noise = {};
        note(progress, "  helper model " + helper_spec.id);
        helper.emplace(train_or_load(out / "models" / spec.id / "helper.lgm",
                                     lang.train, cfg, train));
      }
      return *helper;
    };

    // Surprising contexts, shared by every model and seed.
    const fs::path ctx_path = lang_dir / "contexts.json";
    json ctx_key = {{"code_version", kCodeVersion},
                    {"seed", context_seed(lseed)},
                    {"num_contexts", config.num_contexts}};
    std::vector<automata::SurprisingContext> contexts;
    if (spec.type == LanguageType::corpus) {
      ctx_key["natural"] = {{"top_k", config.natural.top_k},
                            {"max_retries", config.natural.max_retries},
                            {"helper", model_to_json(helper_spec)}};
    } else {
      ctx_key["max_len"] = spec.max_walk_len;
    }
    if (manifest_matches(ctx_path, ctx_key)) {
      contexts = load_contexts(ctx_path);
    } else if (spec.type == LanguageType::dfa) {
      contexts = automata::make_surprising_contexts(
          *lang.dfa, config.num_contexts, context_seed(lseed), spec.max_walk_len);
      save_contexts(ctx_path, ctx_key, contexts);
    } else {
      contexts = corpus::make_surprising_natural(get_helper(), lang.val,
                                                 lang.counts, config.natural,
                                                 context_seed(lseed));
      save_contexts(ctx_path, ctx_key, contexts);
    }

    hypotheses::Sources shared;
    if (lang.dfa) {
      shared.dfa = &*lang.dfa;
      shared.occupancy = lang.occupancy;
    }
    shared.counts = &lang.counts;
    if (needs_helper(hyps)) shared.helper_lm = &get_helper();

    for (const auto& mspec : config.models) {
      auto cfg = mspec.config;
      cfg.vocab_size = lang.vocab_size;
      const auto base_train = config.train_for(mspec);
      const auto& seeds = config.seeds_for(mspec);
      for (const auto& noise : config.noise_for(mspec)) {
        const fs::path model_dir = out / "models" / spec.id / mspec.id / noise.id();
        std::vector<lm::TrainedLm> models;
        for (std::uint64_t s : seeds) {
          auto train = base_train;
          train.seed = model_seed(lseed, s);
          train.noise = noise.config();
          bool trained = false;
          models.push_back(train_or_load(
              model_dir / ("seed-" + std::to_string(s) + ".lgm"), lang.train,
              cfg, train, &trained));
          note(progress, "  " + report_key(spec.id, mspec.id, noise.id()) +
                             " seed " + std::to_string(s) +
                             (trained ? " trained" : " cached"));
        }
        std::optional<lm::TrainedLm> extra_restart;
        if (models.size() == 1) {
          auto train = base_train;
          train.seed = derive_seed(lseed, "restart");
          train.noise = noise.config();
          extra_restart.emplace(train_or_load(model_dir / "restart.lgm",
                                              lang.train, cfg, train));
        }

        eval::SuiteInput input;
        input.hypotheses = hyps;
        input.contexts = contexts;
        input.shared = shared;
        input.metric = config.metric;
        input.metadata = {{"language", spec.id},
                          {"arch", mspec.id},
                          {"noise", noise.id()},
                          {"noise_kind", to_string(noise.kind)},
                          {"noise_p", noise.p}};
        for (std::size_t k = 0; k < models.size(); ++k) {
          const lm::TrainedLm* restart =
              extra_restart ? &*extra_restart : &models[(k + 1) % models.size()];
          input.seeds.push_back({seeds[k], &models[k], restart});
        }
        auto report = eval::evaluate_suite(input);
        const auto key = report_key(spec.id, mspec.id, noise.id());
        io::write_json(out / "reports" / spec.id / mspec.id / (noise.id() + ".json"),
                       eval::to_json(report));
        sweeps[key] = sweep_json(lambda_sweep(report));
        by_model_noise[mspec.id + "/" + noise.id()].push_back(report);
        result.reports.emplace(key, std::move(report));
      }
    }
  }

  for (const auto& mspec : config.models) {
    for (const auto& noise : config.noise_for(mspec)) {
      const auto key = mspec.id + "/" + noise.id();
      auto pooled = pool_reports(by_model_noise.at(key),
                                 {{"language", "all"},
                                  {"arch", mspec.id},
                                  {"noise", noise.id()},
                                  {"noise_kind", to_string(noise.kind)},
                                  {"noise_p", noise.p}});
      io::write_json(out / "reports" / "pooled" / mspec.id / (noise.id() + ".json"),
                     eval::to_json(pooled));
      sweeps["all/" + key] = sweep_json(lambda_sweep(pooled));
      result.pooled.emplace(key, std::move(pooled));
    }
  }

  // Flat tables.
  std::string results_csv = "language,arch,noise,hypothesis,seed,acc\n";
  auto append_rows = [&](const eval::HypothesisReport& r) {
    const auto csv = eval::to_csv(r);
    results_csv += csv.substr(csv.find('\n') + 1);
  };
  for (const auto& [key, r] : result.reports) append_rows(r);
  for (const auto& [key, r] : result.pooled) append_rows(r);
  io::write_atomic(out / "results.csv", results_csv);

  std::string sweep_csv = "language,arch,noise,lambda1,acc\n";
  for (const auto& [key, pts] : sweeps.items()) {
    std::string k = key;
    for (char& ch : k) {
      if (ch == '/') ch = ',';
    }
    for (const auto& p : pts) {
      sweep_csv += k + "," + csv_double(p.at(0).get<double>()) + "," +
                   csv_double(p.at(1).get<double>()) + "\n";
    }
  }
  io::write_atomic(out / "lambda_sweep.csv", sweep_csv);

  json summary = {{"experiment", config.name},
                  {"seed", config.seed},
                  {"code_version", kCodeVersion},
                  {"models", json::array()},
                  {"noise", json::array()},
                  {"pooled", json::object()},
                  {"lambda_sweep", sweeps}};
  for (const auto& m : config.models) summary["models"].push_back(m.id);
  for (const auto& n : config.noise) summary["noise"].push_back(n.id());
  for (const auto& [key, r] : result.pooled) summary["pooled"][key] = eval::to_json(r);
  io::write_json(out / "summary.json", summary);

  write_figures(out);
  note(progress, "wrote " + out.string());
  return result;
}

void write_figures(const fs::path& dir) {
  const json summary = io::read_json(dir / "summary.json");
  const auto models = summary.at("models").get<std::vector<std::string>>();
  const auto noises = summary.at("noise").get<std::vector<std::string>>();
  const auto& pooled = summary.at("pooled");

  auto bars_for = [](const eval::HypothesisReport& r) {
    std::vector<plot::Bar> bars;
    for (const auto& row : r.rows) {
      if (row.ok()) bars.push_back({row.name, row.mean_acc, row.std_acc});
    }
    return bars;
  };

  // Accuracy of every hypothesis per architecture, noiseless training.
  const std::string clean = noises.front();
  std::vector<plot::BarGroup> fig2;
  for (const auto& m : models) {
    const auto key = m + "/" + clean;
    if (!pooled.contains(key)) continue;
    fig2.push_back({m, bars_for(eval::report_from_json(pooled.at(key)))});
  }
  io::write_atomic(dir / "fig2_accuracy.svg",
                   plot::bar_chart(fig2, {"Predicted generalization accuracy (" +
                                              clean + ")",
                                          "architecture", "acc"}));

  // Complementary log-linear weight sweep.
  std::vector<plot::Series> fig3;
  for (const auto& [key, pts] : summary.at("lambda_sweep").items()) {
    if (pts.empty()) continue;
    plot::Series s{key, {}};
    for (const auto& p : pts) s.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    fig3.push_back(std::move(s));
  }
  io::write_atomic(dir / "fig3_lambda_sweep.svg",
                   plot::line_chart(fig3, {"Log-linear interpolation weight",
                                           "lambda1 (weight on global)", "acc"}));

  // Noise comparison per architecture.
  for (const auto& m : models) {
    std::vector<plot::BarGroup> groups;
    for (const auto& n : noises) {
      const auto key = m + "/" + n;
      if (!pooled.contains(key)) continue;
      groups.push_back({n, bars_for(eval::report_from_json(pooled.at(key)))});
    }
    io::write_atomic(dir / ("fig4_noise_" + m + ".svg"),
                     plot::bar_chart(groups, {"Training noise (" + m + ")",
                                              "noise", "acc"}));
  }
}

}  // namespace locglob::experiment
