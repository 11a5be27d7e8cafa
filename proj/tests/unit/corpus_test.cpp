// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "locglob/automata.hpp"
#include "locglob/corpus.hpp"
#include "locglob/eval.hpp"

using namespace locglob;
using namespace locglob::corpus;

namespace {

constexpr Token a = 0, b = 1, c = 2;

TokenSeq seq(std::vector<Token> t, bool terminated = true) {
  return TokenSeq{std::move(t), terminated};
}

class UniformModel : public NextTokenModel {
 public:
  explicit UniformModel(std::size_t n) : n_(n) {}
  std::size_t output_size() const override { return n_; }
  CategoricalDist next_dist(std::span<const Token>) const override {
    return CategoricalDist::uniform(n_);
  }

 private:
  std::size_t n_;
};

// Puts most mass on one token chosen by the last context token,
// so frequent tokens are often unlikely.
class PeakedModel : public NextTokenModel {
 public:
  explicit PeakedModel(std::size_t n) : n_(n) {}
  std::size_t output_size() const override { return n_; }
  CategoricalDist next_dist(std::span<const Token> ctx) const override {
    std::vector<double> w(n_, 1.0);
    const std::size_t peak = ctx.empty() ? 0 : (ctx.back() + 1) % n_;
    w[peak] = 1000.0;
    return CategoricalDist::from_weights(std::move(w));
  }

 private:
  std::size_t n_;
};

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("count_corpus on a single sentence") {
  const std::vector<TokenSeq> corpus{seq({a, b})};
  const auto t = count_corpus(corpus, 3);
  CHECK(t.unigram[a] == 1);
  CHECK(t.unigram[b] == 1);
  CHECK(t.unigram[c] == 0);
  CHECK(t.unigram[t.eos()] == 1);
  CHECK(t.bigram_count(a, b) == 1);
  CHECK(t.bigram_count(b, t.eos()) == 1);
  CHECK(t.bigram.size() == 2);
  CHECK(t.total_tokens == 3);
}

TEST_CASE("count_corpus on an empty corpus") {
  const auto t = count_corpus({}, 4);
  CHECK(t.total_tokens == 0);
  CHECK(t.bigram.empty());
  CHECK(std::all_of(t.unigram.begin(), t.unigram.end(),
                    [](auto v) { return v == 0; }));
  CHECK_THROWS(unigram_dist(t));
}

TEST_CASE("count_corpus reports the position of an out-of-range token") {
  const std::vector<TokenSeq> corpus{seq({a}), seq({a, 9})};
  try {
    count_corpus(corpus, 3);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string m = e.what();
    CHECK(m.find("sequence 1") != std::string::npos);
    CHECK(m.find("position 1") != std::string::npos);
  }
}

TEST_CASE("count_corpus agrees with an independent recount") {
  automata::DfaConfig cfg;
  cfg.seed = 31;
  const auto d = automata::generate_dfa(cfg);
  const auto corpus = automata::sample_corpus(d, 20000, 5);
  const auto t = count_corpus(corpus, d.alphabet_size());

  std::map<std::pair<Token, Token>, std::uint64_t> bi;
  std::vector<std::uint64_t> uni(d.dist_size(), 0);
  std::uint64_t total = 0;
  for (const auto& s : corpus) {
    std::vector<Token> full = s.tokens;
    if (s.terminated) full.push_back(d.eos());
    for (std::size_t i = 0; i < full.size(); ++i) {
      ++uni[full[i]];
      ++total;
      if (i > 0) ++bi[{full[i - 1], full[i]}];
    }
  }
  CHECK(t.unigram == uni);
  CHECK(t.bigram == bi);
  CHECK(t.total_tokens == total);
  std::uint64_t sum = 0;
  for (auto u : t.unigram) sum += u;
  CHECK(sum == t.total_tokens);
  for (const auto& [k, v] : t.bigram) {
    CHECK(t.unigram[k.first] > 0);
    CHECK(t.unigram[k.second] > 0);
  }
}

TEST_CASE("unigram_dist normalizes counts") {
  CountTable t;
  t.vocab_size = 2;
  t.unigram = {3, 1, 0};
  t.total_tokens = 4;
  const auto p = unigram_dist(t);
  CHECK(p[a] == 0.75);
  CHECK(p[b] == 0.25);

  const std::vector<TokenSeq> one{seq({c}, false)};
  const auto q = unigram_dist(count_corpus(one, 3));
  CHECK(q[c] == 1.0);
}

TEST_CASE("bigram_dist is the raw count ratio") {
  CountTable t;
  t.vocab_size = 3;
  t.unigram = {4, 3, 1, 0};
  t.total_tokens = 8;
  t.bigram = {{{a, b}, 3}, {{a, c}, 1}};
  const auto p = bigram_dist(t, a);
  CHECK(p[b] == 0.75);
  CHECK(p[c] == 0.25);
  CHECK_THROWS_AS(bigram_dist(t, c), UnseenTokenError);

  const auto fb = bigram_or_unigram(t, c);
  CHECK(fb.used_fallback);
  CHECK(fb.dist == unigram_dist(t));
  CHECK_FALSE(bigram_or_unigram(t, a).used_fallback);

  const std::vector<TokenSeq> once{seq({b, a})};
  const auto q = bigram_dist(count_corpus(once, 3), a);
  CHECK(q[3] == 1.0);
}

TEST_CASE("sampled unigram approaches the exact emission marginal") {
  automata::DfaConfig cfg;
  cfg.seed = 13;
  const auto d = automata::generate_dfa(cfg);
  const auto corpus = automata::sample_corpus(d, 100000, 8, 0);
  const auto p = unigram_dist(count_corpus(corpus, d.alphabet_size()));
  const auto m = automata::emission_marginal(d);
  const double n = 0.0 + count_corpus(corpus, d.alphabet_size()).total_tokens;
  std::size_t cases = 0, within = 0;
  for (std::size_t v = 0; v < m.size(); ++v) {
    if (m[v] == 0.0) {
      CHECK(p[v] == 0.0);
      continue;
    }
    ++cases;
    if (std::abs(p[v] - m[v]) <= 3.0 * std::sqrt(m[v] * (1 - m[v]) / n)) {
      ++within;
    }
  }
  CHECK(within >= 0.95 * static_cast<double>(cases));
}

TEST_CASE("bigram estimates converge to the exact local distribution") {
  automata::DfaConfig cfg;
  cfg.seed = 77;
  const auto d = automata::generate_dfa(cfg);
  const auto mu = automata::occupancy_measure(d);
  auto mean_tv = [&](std::size_t walks) {
    const auto t =
        count_corpus(automata::sample_corpus(d, walks, 1, 0), d.alphabet_size());
    double sum = 0;
    std::size_t n = 0;
    for (Token x : automata::used_symbols(d)) {
      const auto est = bigram_or_unigram(t, x);
      sum += eval::tv_distance(est.dist, automata::ground_truth_local(d, x, mu));
      ++n;
    }
    return sum / static_cast<double>(n);
  };
  const double small = mean_tv(10000);
  const double large = mean_tv(1000000);
  CHECK(large < small);
  CHECK(large < 0.02);
}

TEST_CASE("top_k_tokens orders by count then id") {
  CountTable t;
  t.vocab_size = 4;
  t.unigram = {2, 5, 5, 1, 100};
  CHECK(top_k_tokens(t, 3) == std::vector<Token>{1, 2, 0});
  CHECK(top_k_tokens(t, 10).size() == 4);
}

TEST_CASE("natural surprising contexts satisfy both predicates") {
  std::vector<TokenSeq> sentences;
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    std::vector<Token> s;
    const std::size_t len = 2 + rng.below(8);
    for (std::size_t j = 0; j < len; ++j) s.push_back(rng.below(12));
    sentences.push_back(seq(std::move(s)));
  }
  const auto counts = count_corpus(sentences, 12);
  const PeakedModel model(13);
  NaturalContextOptions opt;
  opt.top_k = 6;
  opt.num_contexts = 50;
  const auto ctxs = make_surprising_natural(model, sentences, counts, opt, 9);
  REQUIRE(ctxs.size() == 50);
  const auto frequent = top_k_tokens(counts, 6);
  for (const auto& cx : ctxs) {
    CHECK(std::find(frequent.begin(), frequent.end(), cx.local_token) !=
          frequent.end());
    CHECK(model.next_dist(cx.global_ctx.tokens)[cx.local_token] < 1.0 / 6);
    CHECK(cx.epsilon == doctest::Approx(1.0 / 6));
    CHECK_FALSE(cx.global_ctx.tokens.empty());
    // a strict prefix of some sentence
    const bool found = std::any_of(
        sentences.begin(), sentences.end(), [&](const TokenSeq& s) {
          return s.tokens.size() > cx.global_ctx.tokens.size() &&
                 std::equal(cx.global_ctx.tokens.begin(),
                            cx.global_ctx.tokens.end(), s.tokens.begin());
        });
    CHECK(found);
  }
  CHECK(make_surprising_natural(model, sentences, counts, opt, 9) == ctxs);
}

TEST_CASE("uniform model with top_k = vocab admits no surprising token") {
  std::vector<TokenSeq> sentences{seq({a, b, c}), seq({c, b})};
  const auto counts = count_corpus(sentences, 3);
  const UniformModel model(4);
  NaturalContextOptions opt;
  opt.top_k = model.output_size();  // every probability equals 1/k
  opt.num_contexts = 1;
  opt.max_retries = 20;
  CHECK_THROWS_AS(make_surprising_natural(model, sentences, counts, opt, 1),
                  Error);
}

TEST_CASE("count table json round trip") {
  const std::vector<TokenSeq> corpus{seq({a, b, c}), seq({b, b}, false)};
  const auto t = count_corpus(corpus, 3);
  CHECK(count_table_from_json(to_json(t)) == t);
}

TEST_CASE("token files round trip with truncated walks") {
  const auto dir = std::filesystem::temp_directory_path() / "locglob-corpus";
  std::filesystem::create_directories(dir);
  const std::vector<TokenSeq> corpus{seq({a, b}), seq({c, c, c}, false),
                                     seq({})};
  write_token_file(dir / "t.txt", corpus, 3, {{"seed", 4}});
  const auto f = read_token_file(dir / "t.txt");
  CHECK(f.sequences == corpus);
  CHECK(f.header.at("seed") == 4);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
