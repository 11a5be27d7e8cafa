// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include "locglob/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <numeric>
#include <sstream>

#include "locglob/io.hpp"

namespace locglob::corpus {

std::uint64_t CountTable::bigram_count(Token prev, Token next) const {
  auto it = bigram.find({prev, next});
  return it == bigram.end() ? 0 : it->second;
}

CountTable count_corpus(std::span<const TokenSeq> sequences,
                        std::size_t vocab_size) {
  CountTable t;
  t.vocab_size = vocab_size;
  t.unigram.assign(vocab_size + 1, 0);
  const Token eos = t.eos();
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& toks = sequences[i].tokens;
    for (std::size_t j = 0; j < toks.size(); ++j) {
      if (toks[j] >= vocab_size) {
        throw Error("count_corpus: token " + std::to_string(toks[j]) +
                    " out of range at sequence " + std::to_string(i) +
                    ", position " + std::to_string(j));
      }
      ++t.unigram[toks[j]];
      ++t.total_tokens;
      if (j + 1 < toks.size()) ++t.bigram[{toks[j], toks[j + 1]}];
    }
    if (sequences[i].terminated) {
      ++t.unigram[eos];
      ++t.total_tokens;
      if (!toks.empty()) ++t.bigram[{toks.back(), eos}];
    }
  }
  return t;
}

CategoricalDist unigram_dist(const CountTable& counts) {
  if (counts.total_tokens == 0) throw Error("unigram_dist: empty count table");
  std::vector<double> w(counts.unigram.begin(), counts.unigram.end());
  return CategoricalDist::from_weights(std::move(w));
}

CategoricalDist token_unigram_dist(const CountTable& counts) {
  std::vector<double> w(counts.unigram.begin(), counts.unigram.end());
  w.back() = 0.0;
  return CategoricalDist::from_weights(std::move(w));
}

CategoricalDist bigram_dist(const CountTable& counts, Token x_l) {
  std::vector<double> w(counts.vocab_size + 1, 0.0);
  double total = 0.0;
  for (auto it = counts.bigram.lower_bound({x_l, 0});
       it != counts.bigram.end() && it->first.first == x_l; ++it) {
    w[it->first.second] = static_cast<double>(it->second);
    total += static_cast<double>(it->second);
  }
  if (total == 0.0) {
    throw UnseenTokenError("bigram_dist: token " + std::to_string(x_l) +
                           " has no observed successor");
  }
  return CategoricalDist::from_weights(std::move(w));
}

LocalEstimate bigram_or_unigram(const CountTable& counts, Token x_l) {
  try {
    return {bigram_dist(counts, x_l), false};
  } catch (const UnseenTokenError&) {
    return {unigram_dist(counts), true};
  }
}

std::vector<Token> top_k_tokens(const CountTable& counts, std::size_t k) {
  std::vector<Token> ids(counts.vocab_size);
  std::iota(ids.begin(), ids.end(), Token{0});
  std::stable_sort(ids.begin(), ids.end(), [&](Token a, Token b) {
    return counts.unigram[a] > counts.unigram[b];
  });
  ids.resize(std::min(k, ids.size()));
  return ids;
}

std::vector<automata::SurprisingContext> make_surprising_natural(
    const NextTokenModel& lm, std::span<const TokenSeq> sentences,
    const CountTable& counts, const NaturalContextOptions& options,
    std::uint64_t seed) {
  if (lm.output_size() != counts.vocab_size + 1) {
    throw Error("make_surprising_natural: model vocabulary does not match "
                "count table");
  }
  if (options.top_k == 0) throw Error("make_surprising_natural: top_k == 0");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (sentences[i].tokens.size() >= 2) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw Error("make_surprising_natural: no sentence of length >= 2");
  }
  const auto frequent = top_k_tokens(counts, options.top_k);
  const double epsilon = 1.0 / static_cast<double>(options.top_k);

  Rng rng(seed);
  std::vector<automata::SurprisingContext> out;
  out.reserve(options.num_contexts);
  while (out.size() < options.num_contexts) {
    bool produced = false;
    for (std::size_t attempt = 0; attempt < options.max_retries; ++attempt) {
      const auto& sent = sentences[eligible[rng.below(eligible.size())]];
      const std::size_t n = 1 + rng.below(sent.tokens.size() - 1);
      std::vector<Token> prefix(sent.tokens.begin(), sent.tokens.begin() + n);
      const auto dists = lm.prefix_dists(prefix);
      const auto& after = dists.back();
      std::vector<Token> candidates;
      for (Token x : frequent) {
        if (after[x] < epsilon) candidates.push_back(x);
      }
      if (candidates.empty()) continue;
      automata::SurprisingContext ctx;
      ctx.tau = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        ctx.tau = std::min(ctx.tau, dists[i][prefix[i]]);
      }
      ctx.global_ctx = TokenSeq{std::move(prefix), false};
      ctx.local_token = candidates[rng.below(candidates.size())];
      ctx.epsilon = epsilon;
      out.push_back(std::move(ctx));
      produced = true;
      break;
    }
    if (!produced) {
      throw Error("make_surprising_natural: no candidate token after " +
                  std::to_string(options.max_retries) + " truncations");
    }
  }
  return out;
}

nlohmann::json to_json(const CountTable& counts) {
  nlohmann::json bigrams = nlohmann::json::array();
  for (const auto& [key, c] : counts.bigram) {
    bigrams.push_back({key.first, key.second, c});
  }
  return {{"vocab_size", counts.vocab_size},
          {"total_tokens", counts.total_tokens},
          {"unigram", counts.unigram},
          {"bigram", std::move(bigrams)}};
}

CountTable count_table_from_json(const nlohmann::json& j) {
  CountTable t;
  t.vocab_size = j.at("vocab_size").get<std::size_t>();
  t.total_tokens = j.at("total_tokens").get<std::uint64_t>();
  t.unigram = j.at("unigram").get<std::vector<std::uint64_t>>();
  if (t.unigram.size() != t.vocab_size + 1) {
    throw Error("count table json: unigram has wrong length");
  }
  for (const auto& b : j.at("bigram")) {
    t.bigram[{b.at(0).get<Token>(), b.at(1).get<Token>()}] =
        b.at(2).get<std::uint64_t>();
  }
  return t;
}

// ---------------------------------------------------------------------------

void write_token_file(const std::filesystem::path& path,
                      std::span<const TokenSeq> sequences,
                      std::size_t vocab_size, nlohmann::json metadata) {
  if (!metadata.is_object()) metadata = nlohmann::json::object();
  metadata["format"] = "locglob-tokens";
  metadata["version"] = 1;
  metadata["vocab_size"] = vocab_size;
  metadata["eos_explicit"] = true;
  metadata["num_sequences"] = sequences.size();
  std::string out = "# " + metadata.dump() + "\n";
  for (const auto& s : sequences) {
    bool first = true;
    for (Token t : s.tokens) {
      if (!first) out += ' ';
      out += std::to_string(t);
      first = false;
    }
    if (s.terminated) {
      if (!first) out += ' ';
      out += std::to_string(vocab_size);
    }
    out += '\n';
  }
  io::write_atomic(path, out);
}

TokenFile read_token_file(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  TokenFile file;
  std::size_t pos = 0;
  if (text.rfind("# ", 0) == 0) {
    const auto nl = text.find('\n');
    file.header = nlohmann::json::parse(text.substr(2, nl - 2));
    pos = nl == std::string::npos ? text.size() : nl + 1;
  }
  const bool explicit_eos =
      file.header.is_object() && file.header.value("eos_explicit", false);
  const auto eos = explicit_eos
                       ? file.header.at("vocab_size").get<std::uint64_t>()
                       : std::numeric_limits<std::uint64_t>::max();
  std::size_t line_no = file.header.is_null() ? 0 : 1;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    ++line_no;
    TokenSeq seq;
    seq.terminated = !explicit_eos;
    const char* p = text.data() + pos;
    const char* end = text.data() + nl;
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p == end) break;
      std::uint64_t v = 0;
      auto [q, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) {
        throw Error(path.string() + ":" + std::to_string(line_no) +
                    ": malformed token");
      }
      if (seq.terminated && explicit_eos) {
        throw Error(path.string() + ":" + std::to_string(line_no) +
                    ": token after EOS");
      }
      if (v == eos) {
        seq.terminated = true;
      } else {
        seq.tokens.push_back(static_cast<Token>(v));
      }
      p = q;
    }
    file.sequences.push_back(std::move(seq));
    pos = nl + 1;
  }
  return file;
}

}  // namespace locglob::corpus
