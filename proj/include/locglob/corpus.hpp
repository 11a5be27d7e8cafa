// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// Token-stream statistics and surprising contexts for generic corpora.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "locglob/automata.hpp"
#include "locglob/common.hpp"
#include "locglob/rng.hpp"

namespace locglob::corpus {

/// Unigram and bigram counts. Index vocab_size stands for EOS, which is
/// counted both as a unigram and as the successor of a sentence's last token.
struct CountTable {
  std::size_t vocab_size = 0;
  std::vector<std::uint64_t> unigram;  // size vocab_size + 1
  std::map<std::pair<Token, Token>, std::uint64_t> bigram;
  std::uint64_t total_tokens = 0;

  Token eos() const { return static_cast<Token>(vocab_size); }
  std::uint64_t bigram_count(Token prev, Token next) const;
  bool operator==(const CountTable&) const = default;
};

CountTable count_corpus(std::span<const TokenSeq> sequences,
                        std::size_t vocab_size);

CategoricalDist unigram_dist(const CountTable& counts);
/// Unigram restricted to real tokens (EOS removed), for input noising.
CategoricalDist token_unigram_dist(const CountTable& counts);

class UnseenTokenError : public Error {
 public:
  using Error::Error;
};

/// count(x_l, ·) / count(x_l). Throws UnseenTokenError when x_l never has a
/// successor in the corpus.
CategoricalDist bigram_dist(const CountTable& counts, Token x_l);

/// Bigram estimate with the unigram fallback for unseen x_l.
struct LocalEstimate {
  CategoricalDist dist;
  bool used_fallback = false;
};
LocalEstimate bigram_or_unigram(const CountTable& counts, Token x_l);

/// The k most frequent real tokens, ties broken by smaller id.
std::vector<Token> top_k_tokens(const CountTable& counts, std::size_t k);

struct NaturalContextOptions {
  std::size_t top_k = 198;
  std::size_t num_contexts = 200;
  std::size_t max_retries = 1000;  // per context
};

/// Truncates sentences at uniformly random lengths and appends a frequent
/// token the model considers unlikely (probability below 1/top_k).
std::vector<automata::SurprisingContext> make_surprising_natural(
    const NextTokenModel& lm, std::span<const TokenSeq> sentences,
    const CountTable& counts, const NaturalContextOptions& options,
    std::uint64_t seed);

nlohmann::json to_json(const CountTable& counts);
CountTable count_table_from_json(const nlohmann::json& j);

// --- token files --------------------------------------------------------------
//
// One sequence per line, space-separated integer ids. An optional first line
// "# {json}" carries metadata. When the header sets "eos_explicit": true,
// terminated sequences end with the EOS id (= vocab_size) and lines without
// it are truncated walks; otherwise every line is a complete sentence.

struct TokenFile {
  nlohmann::json header;  // null when absent
  std::vector<TokenSeq> sequences;
};

void write_token_file(const std::filesystem::path& path,
                      std::span<const TokenSeq> sequences,
                      std::size_t vocab_size, nlohmann::json metadata);
TokenFile read_token_file(const std::filesystem::path& path);

}  // namespace locglob::corpus
