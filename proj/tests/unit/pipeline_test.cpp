// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <map>

#include "locglob/experiment.hpp"
#include "locglob/io.hpp"

using namespace locglob;
using namespace locglob::experiment;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_config(const fs::path& out) {
  auto j = json::parse(R"({
    "name": "tiny",
    "seed": 11,
    "languages": [
      {"id": "a", "dfa": {"num_states": 4, "alphabet_size": 16,
                          "num_neighbors": 2, "num_symbol_uses": 2},
       "num_train": 300, "num_val": 20},
      {"id": "b", "dfa": {"num_states": 4, "alphabet_size": 16,
                          "num_neighbors": 2, "num_symbol_uses": 2},
       "num_train": 300, "num_val": 20}
    ],
    "models": [
      {"id": "gru", "config": {"arch": "gru", "embed_dim": 8, "hidden_dim": 16}}
    ],
    "train": {"learning_rate": 0.01, "batch_size": 16, "num_examples": 600},
    "noise": [{"kind": "none"}, {"kind": "token_swap", "p": 0.1}],
    "hypotheses": "standard",
    "num_contexts": 12,
    "seeds": [0, 1]
  })");
  j["output_dir"] = out.string();
  return j;
}

std::map<fs::path, std::string> snapshot(const fs::path& dir) {
  std::map<fs::path, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) {
      files[fs::relative(e.path(), dir)] = io::file_digest(e.path());
    }
  }
  return files;
}

std::string config_error(json j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

struct Silent : Progress {
  std::size_t trained = 0;
  void message(const std::string& text) override {
    if (text.find("trained") != std::string::npos) ++trained;
  }
};

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config errors name the field") {
  const auto good = tiny_config("x");
  CHECK(config_error(good) == "");

  auto j = good;
  j.erase("name");
  CHECK(config_error(j).find("name") != std::string::npos);

  j = good;
  j["hypotheses"] = json::array();
  CHECK(config_error(j).find("hypotheses") != std::string::npos);

  j = good;
  j["languages"][0]["num_trian"] = 5;
  CHECK(config_error(j).find("num_trian") != std::string::npos);

  j = good;
  j["languages"][1]["dfa"]["seed"] = 5;
  CHECK(config_error(j).find("languages[1].dfa.seed") != std::string::npos);

  j = good;
  j["models"][0]["config"]["vocab_size"] = 5;
  CHECK(config_error(j).find("vocab_size") != std::string::npos);

  j = good;
  j["noise"][1]["p"] = 1.5;
  CHECK(config_error(j).find("noise") != std::string::npos);

  j = good;
  j["seeds"] = {1, 1};
  CHECK(config_error(j).find("seeds") != std::string::npos);
}

TEST_CASE("config defaults and round trip") {
  auto j = tiny_config("x");
  j.erase("output_dir");
  const auto c = config_from_json(j);
  CHECK(c.output_dir == fs::path("runs/tiny"));
  CHECK(c.standard_hypotheses);
  CHECK(c.models[0].config.vocab_size == 1);
  CHECK(c.noise[1].id() == "token_swap-0.1");
  CHECK(c.noise[1].config().token_swap_prob == 0.1);
  CHECK(c.languages[0].num_val == 20);
  const auto again = config_from_json(to_json(c));
  CHECK(to_json(again) == to_json(c));
}

TEST_CASE("output root environment variable") {
  ::setenv(kOutputRootEnv, "/tmp/root", 1);
  CHECK(resolve_output_dir("runs/x") == fs::path("/tmp/root/runs/x"));
  CHECK(resolve_output_dir("/abs") == fs::path("/abs"));
  ::unsetenv(kOutputRootEnv);
  CHECK(resolve_output_dir("runs/x") == fs::path("runs/x"));
}

TEST_CASE("seeds are distinct per role") {
  const auto lang = language_seed(1, 0);
  CHECK(lang != language_seed(1, 1));
  CHECK(lang != language_seed(2, 0));
  CHECK(dfa_seed(lang) != context_seed(lang));
  CHECK(walk_seed(lang, "train") != walk_seed(lang, "val"));
  CHECK(model_seed(lang, 0) != model_seed(lang, 1));
  CHECK(helper_seed(lang) != model_seed(lang, 0));
  CHECK(language_seed(1, 0) == lang);
}

TEST_CASE("suite runs, writes artifacts and reruns byte-identically") {
  const auto dir = fs::temp_directory_path() / "locglob-pipeline-test";
  fs::remove_all(dir);
  const auto config = config_from_json(tiny_config(dir));

  Silent first;
  const auto result = run_suite(config, &first);
  CHECK(first.trained > 0);
  for (const char* f : {"config.json", "results.csv", "lambda_sweep.csv",
                        "summary.json", "fig2_accuracy.svg",
                        "fig3_lambda_sweep.svg", "fig4_noise_gru.svg",
                        "languages/a/dfa.json", "languages/a/train.txt", "languages/a/val.txt",
                        "languages/a/manifest.json", "languages/a/contexts.json"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  CHECK(result.reports.size() == 4);
  CHECK(result.pooled.size() == 2);

  const auto& pooled = result.pooled.at("gru/none");
  CHECK(pooled.num_contexts == 24);
  CHECK(pooled.complete());
  CHECK(eval::check_consistency(pooled) == "");

  // the sweep endpoints are the single-source rows
  for (const auto& [key, report] : result.reports) {
    const auto sweep = lambda_sweep(report);
    REQUIRE(sweep.size() == 101);
    CHECK(sweep.front().lambda1 == 0.0);
    CHECK(sweep.back().lambda1 == 1.0);
    CHECK(sweep.front().acc ==
          doctest::Approx(report.row("local").mean_acc).epsilon(1e-12));
    CHECK(sweep.back().acc ==
          doctest::Approx(report.row("global").mean_acc).epsilon(1e-12));
  }

  // per-language pooling by hand
  const auto& ra = result.reports.at("a/gru/none");
  const auto& rb = result.reports.at("b/gru/none");
  const std::vector<eval::HypothesisReport> both{ra, rb};
  const auto pooled_again = pool_reports(both, pooled.metadata);
  for (const auto& row : pooled_again.rows) {
    for (std::size_t s = 0; s < 2; ++s) {
      const double expect =
          (ra.row(row.name).acc[s] + rb.row(row.name).acc[s]) / 2;
      CHECK(row.acc[s] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  CHECK(eval::to_json(pooled_again) == eval::to_json(pooled));

  const auto csv = io::read_file(dir / "lambda_sweep.csv");
  CHECK(csv.rfind("language,arch,noise,lambda1,acc\n", 0) == 0);
  CHECK(csv.find("\nall,gru,none,0.5,") != std::string::npos);

  const auto before = snapshot(dir);
  Silent second;
  run_suite(config, &second);
  CHECK(second.trained == 0);
  CHECK(snapshot(dir) == before);

  // a fresh directory reproduces every artifact except the recorded path
  const auto other = fs::temp_directory_path() / "locglob-pipeline-test-2";
  fs::remove_all(other);
  run_suite(config_from_json(tiny_config(other)));
  auto fresh = snapshot(other);
  auto old = before;
  fresh.erase("config.json");
  old.erase("config.json");
  CHECK(fresh == old);

  fs::remove(dir / "fig2_accuracy.svg");
  write_figures(dir);
  CHECK(snapshot(dir) == before);

  fs::remove_all(dir);
  fs::remove_all(other);
}

TEST_CASE("changed training settings invalidate the cached model") {
  const auto dir = fs::temp_directory_path() / "locglob-cache-test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::vector<TokenSeq> corpus{{{0, 1}, true}, {{1, 0, 1}, true}};
  auto cfg = lm::LmConfig::gru_default(2);
  cfg.embed_dim = 4;
  cfg.hidden_dim = 4;
  lm::TrainConfig t;
  t.num_examples = 20;
  bool trained = false;
  train_or_load(dir / "m.lgm", corpus, cfg, t, &trained);
  CHECK(trained);
  train_or_load(dir / "m.lgm", corpus, cfg, t, &trained);
  CHECK_FALSE(trained);
  t.seed = 9;
  train_or_load(dir / "m.lgm", corpus, cfg, t, &trained);
  CHECK(trained);
  fs::remove_all(dir);
}

}  // TEST_SUITE
