// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: locglob <subcommand> [options]. Run with --help for
// the list of subcommands.

#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "locglob/automata.hpp"
#include "locglob/corpus.hpp"
#include "locglob/eval.hpp"
#include "locglob/experiment.hpp"
#include "locglob/hypotheses.hpp"
#include "locglob/io.hpp"
#include "locglob/lm.hpp"
#include "locglob/theory.hpp"

namespace fs = std::filesystem;
using namespace locglob;
using nlohmann::json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitCheckFailed = 3;

struct StderrProgress : experiment::Progress {
  void message(const std::string& text) override { std::cerr << text << '\n'; }
};

fs::path under_root(const fs::path& p) {
  return experiment::resolve_output_dir(p);
}

// --- gen-language ---------------------------------------------------------------

struct GenLanguageArgs {
  std::uint64_t seed = 0;
  fs::path out = "language";
  std::size_t num_examples = 128000;
  std::size_t num_val = 1000;
  std::size_t max_walk_len = automata::kDefaultMaxWalkLength;
  automata::DfaConfig dfa;
};

int gen_language(const GenLanguageArgs& a) {
  experiment::LanguageSpec spec;
  spec.id = fs::path(a.out).filename().string();
  spec.dfa = a.dfa;
  spec.num_train = a.num_examples;
  spec.num_val = a.num_val;
  spec.max_walk_len = a.max_walk_len;
  const auto dir = under_root(a.out);
  const auto lang = experiment::prepare_language(spec, a.seed, dir);
  std::cout << "wrote " << dir.string() << " (" << lang.train.size()
            << " train, " << lang.val.size() << " val sequences)\n";
  return 0;
}

// --- sample-corpus --------------------------------------------------------------

struct SampleCorpusArgs {
  fs::path dfa;
  std::uint64_t seed = 0;
  std::size_t num = 1000;
  std::size_t max_len = automata::kDefaultMaxWalkLength;
  fs::path out;
};

int sample_corpus(const SampleCorpusArgs& a) {
  const auto dfa = automata::dfa_from_json(io::read_json(a.dfa));
  const auto walks = automata::sample_corpus(dfa, a.num, a.seed, a.max_len);
  const auto out = under_root(a.out);
  corpus::write_token_file(out, walks, dfa.alphabet_size(),
                           {{"seed", a.seed}, {"dfa", io::file_digest(a.dfa)}});
  std::cout << "wrote " << walks.size() << " walks to " << out.string() << '\n';
  return 0;
}

// --- train-lm -------------------------------------------------------------------

struct TrainLmArgs {
  fs::path train;
  fs::path out;
  std::uint64_t seed = 0;
  std::optional<fs::path> config;
  std::string arch = "gru";
  std::optional<std::size_t> hidden, embed, layers, heads, vocab;
  std::optional<std::size_t> num_examples, epochs, batch, max_steps;
  std::optional<double> lr;
  bool linear_decay = false;
  double token_swap = 0.0;
  double state_dropout = 0.0;
  bool verbose = false;
};

int train_lm(const TrainLmArgs& a) {
  auto file = corpus::read_token_file(a.train);
  std::size_t vocab = a.vocab.value_or(0);
  if (vocab == 0 && file.header.is_object() && file.header.contains("vocab_size")) {
    vocab = file.header.at("vocab_size").get<std::size_t>();
  }
  if (vocab == 0) throw Error("vocabulary size unknown; pass --vocab");

  lm::LmConfig cfg;
  lm::TrainConfig train;
  if (a.config) {
    const auto j = io::read_json(*a.config);
    if (j.contains("model")) cfg = lm::lm_config_from_json(j.at("model"));
    if (j.contains("train")) train = lm::train_config_from_json(j.at("train"));
  } else {
    cfg = lm::arch_from_string(a.arch) == lm::Arch::gru
              ? lm::LmConfig::gru_default(vocab)
              : lm::LmConfig::transformer_default(vocab);
  }
  cfg.vocab_size = vocab;
  if (a.hidden) cfg.hidden_dim = *a.hidden;
  if (a.embed) cfg.embed_dim = *a.embed;
  if (a.layers) cfg.num_layers = *a.layers;
  if (a.heads) cfg.num_heads = *a.heads;
  if (a.num_examples) train.num_examples = *a.num_examples;
  if (a.epochs) train.epochs = *a.epochs;
  if (a.batch) train.batch_size = *a.batch;
  if (a.max_steps) train.max_steps = *a.max_steps;
  if (a.lr) train.learning_rate = *a.lr;
  if (a.linear_decay) train.linear_decay = true;
  train.seed = a.seed;
  train.noise.token_swap_prob = a.token_swap;
  train.noise.state_dropout_prob = a.state_dropout;

  lm::StepCallback cb;
  if (a.verbose) {
    cb = [](std::size_t step, double loss) {
      if (step % 100 == 0) std::cerr << "step " << step << " loss " << loss << '\n';
    };
  }
  const auto model = lm::train_lm(file.sequences, cfg, train, cb);
  const auto out = under_root(a.out);
  model.save(out);
  std::cout << "trained " << model.provenance().steps << " steps, final loss "
            << model.provenance().final_loss << "; wrote " << out.string() << '\n';
  return 0;
}

// --- make-surprising ------------------------------------------------------------

struct MakeSurprisingArgs {
  std::optional<fs::path> dfa;
  std::optional<fs::path> model;
  std::optional<fs::path> corpus;
  std::uint64_t seed = 0;
  std::size_t count = 100;
  std::size_t max_len = automata::kDefaultMaxWalkLength;
  std::size_t top_k = corpus::NaturalContextOptions{}.top_k;
  fs::path out;
};

int make_surprising(const MakeSurprisingArgs& a) {
  std::vector<automata::SurprisingContext> contexts;
  if (a.dfa) {
    const auto dfa = automata::dfa_from_json(io::read_json(*a.dfa));
    contexts = automata::make_surprising_contexts(dfa, a.count, a.seed, a.max_len);
  } else {
    if (!a.model || !a.corpus) {
      throw Error("natural contexts need --model and --corpus (or pass --dfa)");
    }
    const auto lm = lm::TrainedLm::load(*a.model);
    const auto file = corpus::read_token_file(*a.corpus);
    const auto counts = corpus::count_corpus(file.sequences, lm.config().vocab_size);
    corpus::NaturalContextOptions opts;
    opts.top_k = a.top_k;
    opts.num_contexts = a.count;
    contexts = corpus::make_surprising_natural(lm, file.sequences, counts, opts, a.seed);
  }
  json arr = json::array();
  for (const auto& c : contexts) arr.push_back(automata::to_json(c));
  const auto out = under_root(a.out);
  io::write_json(out, {{"seed", a.seed}, {"contexts", arr}});
  std::cout << "wrote " << contexts.size() << " contexts to " << out.string() << '\n';
  return 0;
}

// --- run-suite ------------------------------------------------------------------

struct RunSuiteArgs {
  fs::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::size_t> num_contexts;
  std::optional<std::size_t> num_examples;
};

int run_suite(const RunSuiteArgs& a) {
  auto j = io::read_json(a.config);
  if (a.seed) j["seed"] = *a.seed;
  if (a.output_dir) j["output_dir"] = *a.output_dir;
  if (a.num_contexts) j["num_contexts"] = *a.num_contexts;
  if (a.num_examples && j.contains("languages") && j["languages"].is_array()) {
    for (auto& l : j["languages"]) l["num_train"] = *a.num_examples;
  }
  const auto config = experiment::config_from_json(j);
  StderrProgress progress;
  const auto result = experiment::run_suite(config, &progress);
  for (const auto& [key, report] : result.pooled) {
    std::cout << key << '\n';
    for (const auto& row : report.rows) {
      if (row.ok()) {
        std::cout << "  " << row.name << "  acc " << row.mean_acc << " +- "
                  << row.std_acc << '\n';
      } else {
        std::cout << "  " << row.name << "  error: " << row.error << '\n';
      }
    }
  }
  return 0;
}

// --- fit-lambda -----------------------------------------------------------------

struct FitLambdaArgs {
  fs::path dfa;
  fs::path model;
  fs::path contexts;
  std::string family = "loglinear";
  std::string tie = "complementary";
  std::optional<double> step;
  std::optional<fs::path> out;
};

int fit_lambda(const FitLambdaArgs& a) {
  const auto dfa = automata::dfa_from_json(io::read_json(a.dfa));
  const auto lm = lm::TrainedLm::load(a.model);
  std::vector<automata::SurprisingContext> contexts;
  const auto doc = io::read_json(a.contexts);
  for (const auto& c : doc.at("contexts")) {
    contexts.push_back(automata::surprising_context_from_json(c));
  }
  const auto occupancy = automata::occupancy_measure(dfa);
  hypotheses::Sources src;
  src.dfa = &dfa;
  src.occupancy = occupancy;
  std::vector<CategoricalDist> local, global, target;
  for (const auto& c : contexts) {
    local.push_back(hypotheses::hyp_local(c, hypotheses::Source::dfa_exact, src));
    global.push_back(hypotheses::hyp_global(c, hypotheses::Source::dfa_exact, src));
    target.push_back(lm.next_dist(c.full_context()));
  }
  const auto family = a.family == "linear" ? hypotheses::Family::linear
                      : a.family == "loglinear"
                          ? hypotheses::Family::loglinear
                          : throw Error("--family must be linear or loglinear");
  const auto tie = hypotheses::tie_mode_from_string(a.tie);
  const double step = a.step.value_or(hypotheses::default_grid_step(family, tie));
  const auto fit = hypotheses::fit_lambda(family, local, global, target, step, tie);
  json grid = json::array();
  for (const auto& g : fit.grid) grid.push_back(json::array({g.lambda1, g.lambda2, g.error}));
  const json j = {{"family", a.family},
                  {"params", hypotheses::to_json(fit.params)},
                  {"error", fit.error},
                  {"acc", eval::acc_from_err(fit.error)},
                  {"grid", grid}};
  if (a.out) {
    io::write_json(under_root(*a.out), j);
  }
  std::cout << hypotheses::to_json(fit.params).dump() << " acc "
            << eval::acc_from_err(fit.error) << '\n';
  return 0;
}

// --- verify-theory --------------------------------------------------------------

struct VerifyTheoryArgs {
  std::uint64_t seed = 0;
  std::optional<fs::path> config;
  std::optional<std::vector<double>> lambdas;
  std::optional<std::size_t> num_tasks;
  std::optional<fs::path> out;
  bool self_test = false;
};

int verify_theory(const VerifyTheoryArgs& a) {
  theory::SweepOptions options;
  if (a.config) options = theory::sweep_options_from_json(io::read_json(*a.config));
  options.seed = a.seed;
  if (a.lambdas) options.lambdas = *a.lambdas;
  if (a.num_tasks) options.num_tasks = *a.num_tasks;
  const auto report = theory::run_sweep(options);
  if (a.out) {
    const auto dir = under_root(*a.out);
    io::write_json(dir / "theory.json", theory::to_json(report));
    io::write_atomic(dir / "theory.csv", theory::to_csv(report));
  }
  const auto half = report.num_detected(theory::Mutation::half_exponent);
  const auto per_ctx = report.num_detected(theory::Mutation::per_context_epsilon);
  std::cout << report.trials.size() << " trials, " << report.num_failed()
            << " failed\n"
            << "mutation half_exponent detected in " << half << " trials\n"
            << "mutation per_context_epsilon detected in " << per_ctx
            << " trials\n";
  if (a.self_test) {
    const bool detected = half + per_ctx > 0;
    std::cout << (detected ? "self-test: mutation detected\n"
                           : "self-test: no mutation detected\n");
    return detected ? 0 : kExitCheckFailed;
  }
  if (report.num_failed() > 0) {
    for (const auto& t : report.trials) {
      for (const auto& f : t.report.failures) {
        std::cerr << "task " << t.task_index << " lambda " << t.report.reg_lambda
                  << ": " << f << '\n';
      }
    }
    return kExitCheckFailed;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local and global context generalization experiments"};
  app.require_subcommand(1);
  int status = 0;

  GenLanguageArgs gl;
  auto* cmd_gl = app.add_subcommand("gen-language",
                                    "Generate an automaton with train/val walks");
  cmd_gl->add_option("--seed", gl.seed)->required();
  cmd_gl->add_option("--out", gl.out, "Output directory");
  cmd_gl->add_option("--num-examples", gl.num_examples, "Training walks");
  cmd_gl->add_option("--num-val", gl.num_val, "Validation walks");
  cmd_gl->add_option("--max-walk-len", gl.max_walk_len);
  cmd_gl->add_option("--states", gl.dfa.num_states);
  cmd_gl->add_option("--alphabet", gl.dfa.alphabet_size);
  cmd_gl->add_option("--neighbors", gl.dfa.num_neighbors);
  cmd_gl->add_option("--symbol-uses", gl.dfa.num_symbol_uses);
  cmd_gl->add_option("--accept-prob", gl.dfa.accept_prob);
  cmd_gl->callback([&] { status = gen_language(gl); });

  SampleCorpusArgs sc;
  auto* cmd_sc = app.add_subcommand("sample-corpus", "Sample random walks");
  cmd_sc->add_option("--dfa", sc.dfa)->required()->check(CLI::ExistingFile);
  cmd_sc->add_option("--seed", sc.seed)->required();
  cmd_sc->add_option("--num", sc.num);
  cmd_sc->add_option("--max-len", sc.max_len);
  cmd_sc->add_option("--out", sc.out)->required();
  cmd_sc->callback([&] { status = sample_corpus(sc); });

  TrainLmArgs tl;
  auto* cmd_tl = app.add_subcommand("train-lm", "Train a language model");
  cmd_tl->add_option("--train", tl.train, "Token file")->required()->check(CLI::ExistingFile);
  cmd_tl->add_option("--out", tl.out, "Checkpoint path")->required();
  cmd_tl->add_option("--seed", tl.seed)->required();
  cmd_tl->add_option("--config", tl.config, "JSON with optional model and train objects");
  cmd_tl->add_option("--arch", tl.arch)->check(CLI::IsMember({"gru", "transformer"}));
  cmd_tl->add_option("--hidden", tl.hidden);
  cmd_tl->add_option("--embed", tl.embed);
  cmd_tl->add_option("--layers", tl.layers);
  cmd_tl->add_option("--heads", tl.heads);
  cmd_tl->add_option("--vocab", tl.vocab);
  cmd_tl->add_option("--num-examples", tl.num_examples);
  cmd_tl->add_option("--epochs", tl.epochs);
  cmd_tl->add_option("--batch", tl.batch);
  cmd_tl->add_option("--max-steps", tl.max_steps);
  cmd_tl->add_option("--lr", tl.lr);
  cmd_tl->add_flag("--linear-decay", tl.linear_decay);
  cmd_tl->add_option("--token-swap", tl.token_swap, "Token substitution probability");
  cmd_tl->add_option("--state-dropout", tl.state_dropout, "Hidden-state dropout probability");
  cmd_tl->add_flag("-v,--verbose", tl.verbose);
  cmd_tl->callback([&] { status = train_lm(tl); });

  MakeSurprisingArgs ms;
  auto* cmd_ms = app.add_subcommand("make-surprising", "Build surprising contexts");
  cmd_ms->add_option("--dfa", ms.dfa)->check(CLI::ExistingFile);
  cmd_ms->add_option("--model", ms.model)->check(CLI::ExistingFile);
  cmd_ms->add_option("--corpus", ms.corpus)->check(CLI::ExistingFile);
  cmd_ms->add_option("--seed", ms.seed)->required();
  cmd_ms->add_option("--count", ms.count);
  cmd_ms->add_option("--max-len", ms.max_len);
  cmd_ms->add_option("--top-k", ms.top_k);
  cmd_ms->add_option("--out", ms.out)->required();
  cmd_ms->callback([&] { status = make_surprising(ms); });

  RunSuiteArgs rs;
  auto* cmd_rs = app.add_subcommand("run-suite", "Run an experiment config end to end");
  cmd_rs->add_option("--config", rs.config)->required()->check(CLI::ExistingFile);
  cmd_rs->add_option("--seed", rs.seed, "Overrides the config seed");
  cmd_rs->add_option("--output-dir", rs.output_dir);
  cmd_rs->add_option("--num-contexts", rs.num_contexts);
  cmd_rs->add_option("--num-examples", rs.num_examples, "Training walks per language");
  cmd_rs->callback([&] { status = run_suite(rs); });

  FitLambdaArgs fl;
  auto* cmd_fl = app.add_subcommand("fit-lambda", "Fit interpolation weights");
  cmd_fl->add_option("--dfa", fl.dfa)->required()->check(CLI::ExistingFile);
  cmd_fl->add_option("--model", fl.model)->required()->check(CLI::ExistingFile);
  cmd_fl->add_option("--contexts", fl.contexts)->required()->check(CLI::ExistingFile);
  cmd_fl->add_option("--family", fl.family)->check(CLI::IsMember({"linear", "loglinear"}));
  cmd_fl->add_option("--tie", fl.tie)->check(CLI::IsMember({"complementary", "free"}));
  cmd_fl->add_option("--step", fl.step);
  cmd_fl->add_option("--out", fl.out);
  cmd_fl->callback([&] { status = fit_lambda(fl); });

  VerifyTheoryArgs vt;
  auto* cmd_vt = app.add_subcommand("verify-theory",
                                    "Check the log-linear bounds on synthetic tasks");
  cmd_vt->add_option("--seed", vt.seed)->required();
  cmd_vt->add_option("--config", vt.config)->check(CLI::ExistingFile);
  cmd_vt->add_option("--lambdas", vt.lambdas)->delimiter(',');
  cmd_vt->add_option("--tasks", vt.num_tasks);
  cmd_vt->add_option("--out", vt.out);
  cmd_vt->add_flag("--self-test", vt.self_test,
                   "Exit 0 only if a deliberately wrong check reports a failure");
  cmd_vt->callback([&] { status = verify_theory(vt); });

  fs::path plot_dir;
  auto* cmd_pl = app.add_subcommand("plot", "Redraw figures from a run directory");
  cmd_pl->add_option("--dir", plot_dir)->required();
  cmd_pl->callback([&] {
    experiment::write_figures(under_root(plot_dir));
    std::cout << "wrote figures to " << under_root(plot_dir).string() << '\n';
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return status;
}
