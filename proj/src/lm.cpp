// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include "locglob/lm.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "gru.hpp"
#include "locglob/corpus.hpp"
#include "locglob/io.hpp"
#include "transformer.hpp"

namespace locglob::lm {

namespace detail {

bool make_example(const TokenSeq& seq, Token eos, Example& out) {
  const auto& t = seq.tokens;
  out.input.clear();
  out.target.clear();
  if (!seq.terminated && t.empty()) return false;
  out.input.push_back(eos);
  if (seq.terminated) {
    out.input.insert(out.input.end(), t.begin(), t.end());
    out.target.assign(t.begin(), t.end());
    out.target.push_back(eos);
  } else {
    out.input.insert(out.input.end(), t.begin(), t.end() - 1);
    out.target.assign(t.begin(), t.end());
  }
  return true;
}

template <typename S>
std::unique_ptr<Network<S>> make_network(const LmConfig& config, Rng& rng) {
  switch (config.arch) {
    case Arch::gru:
      return std::make_unique<GruNetwork<S>>(config, rng);
    case Arch::transformer:
      return std::make_unique<TransformerNetwork<S>>(config, rng);
  }
  throw Error("unknown architecture");
}

template std::unique_ptr<Network<float>> make_network(const LmConfig&, Rng&);
template std::unique_ptr<Network<double>> make_network(const LmConfig&, Rng&);

}  // namespace detail

using detail::Example;
using detail::Mat;

class ModelImpl {
 public:
  std::unique_ptr<detail::Network<float>> net;
};

namespace {

constexpr char kMagic[8] = {'L', 'G', 'L', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void check_unit(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(std::string(what) + " must be in [0, 1], got " +
                std::to_string(p));
  }
}

// Truncates overlong sequences to the context limit (they lose their EOS).
std::vector<Example> build_examples(std::span<const TokenSeq> corpus,
                                    const LmConfig& config) {
  const auto eos = static_cast<Token>(config.vocab_size);
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const TokenSeq& seq = corpus[i];
    for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
      if (seq.tokens[t] >= config.vocab_size) {
        throw Error("sequence " + std::to_string(i) + " position " +
                    std::to_string(t) + ": token " +
                    std::to_string(seq.tokens[t]) + " outside vocabulary of " +
                    std::to_string(config.vocab_size));
      }
    }
    Example ex;
    bool ok;
    if (seq.tokens.size() > config.max_seq_len) {
      TokenSeq cut{{seq.tokens.begin(),
                    seq.tokens.begin() +
                        static_cast<std::ptrdiff_t>(config.max_seq_len)},
                   false};
      ok = detail::make_example(cut, eos, ex);
    } else {
      ok = detail::make_example(seq, eos, ex);
    }
    if (ok) out.push_back(std::move(ex));
  }
  return out;
}

// Shuffle, then chunk.
std::vector<std::vector<std::size_t>> plan_epoch(
    const std::vector<Example>& examples, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

CategoricalDist softmax_column(const Mat<float>& logits, Eigen::Index c) {
  const auto col = logits.col(c).cast<double>();
  const double mx = col.maxCoeff();
  std::vector<double> p(static_cast<std::size_t>(logits.rows()));
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(col(i) - mx);
    z += p[static_cast<std::size_t>(i)];
  }
  for (double& v : p) v /= z;
  return CategoricalDist(std::move(p));
}

template <typename Derived>
void dropout_impl(Eigen::MatrixBase<Derived>& x, double p_drop, Rng& rng) {
  check_unit(p_drop, "state dropout probability");
  if (p_drop >= 1.0) throw Error("state dropout probability 1 zeroes every feature");
  if (p_drop == 0.0) return;
  using S = typename Derived::Scalar;
  const S keep = static_cast<S>(1.0 / (1.0 - p_drop));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      x(i, j) = rng.uniform() < p_drop ? S(0) : x(i, j) * keep;
    }
  }
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& data, std::string source)
      : data_(data), source_(std::move(source)) {}
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++]))
           << (8 * i);
    }
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(source_ + ": truncated checkpoint");
  }
  const std::string& data_;
  std::string source_;
  std::size_t pos_ = 0;
};

nlohmann::json provenance_json(const Provenance& p) {
  return {{"seed", p.seed},
          {"corpus_hash", p.corpus_hash},
          {"noise", to_json(p.noise)},
          {"train_config", p.train_config},
          {"steps", p.steps},
          {"final_loss", p.final_loss},
          {"loss_history", p.loss_history}};
}

Provenance provenance_from_json(const nlohmann::json& j) {
  Provenance p;
  p.seed = j.at("seed").get<std::uint64_t>();
  p.corpus_hash = j.at("corpus_hash").get<std::string>();
  p.noise = noise_config_from_json(j.at("noise"));
  p.train_config = j.at("train_config");
  p.steps = j.at("steps").get<std::size_t>();
  p.final_loss = j.at("final_loss").get<double>();
  p.loss_history = j.at("loss_history").get<std::vector<double>>();
  return p;
}

void reject_unknown_keys(const nlohmann::json& j,
                         std::initializer_list<const char*> known,
                         const char* what) {
  if (!j.is_object()) throw Error(std::string(what) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(),
                     [&](const char* k) { return key == k; })) {
      throw Error(std::string(what) + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace

// --- config -----------------------------------------------------------------

std::string to_string(Arch arch) {
  return arch == Arch::gru ? "gru" : "transformer";
}

Arch arch_from_string(const std::string& s) {
  if (s == "gru") return Arch::gru;
  if (s == "transformer") return Arch::transformer;
  throw Error("unknown architecture '" + s + "' (expected gru or transformer)");
}

LmConfig LmConfig::gru_default(std::size_t vocab_size) {
  LmConfig c;
  c.arch = Arch::gru;
  c.vocab_size = vocab_size;
  c.embed_dim = 128;
  c.hidden_dim = 256;
  c.num_layers = 1;
  return c;
}

LmConfig LmConfig::transformer_default(std::size_t vocab_size) {
  LmConfig c;
  c.arch = Arch::transformer;
  c.vocab_size = vocab_size;
  c.hidden_dim = 256;
  c.embed_dim = 256;
  c.num_layers = 4;
  c.num_heads = 4;
  return c;
}

void LmConfig::validate() const {
  if (vocab_size == 0 || hidden_dim == 0 || num_layers == 0 ||
      max_seq_len == 0 || (arch == Arch::gru && embed_dim == 0)) {
    throw Error("model dimensions must be positive");
  }
  if (arch == Arch::transformer &&
      (num_heads == 0 || hidden_dim % num_heads != 0)) {
    throw Error("num_heads (" + std::to_string(num_heads) +
                ") must divide hidden_dim (" + std::to_string(hidden_dim) +
                ")");
  }
}

void NoiseConfig::validate() const {
  check_unit(token_swap_prob, "token_swap_prob");
  check_unit(state_dropout_prob, "state_dropout_prob");
  if (state_dropout_prob >= 1.0) {
    throw Error("state_dropout_prob 1 zeroes every feature");
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error("Adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw Error("adam_eps must be positive");
  if (batch_size == 0) throw Error("batch_size must be positive");
  if (num_examples == 0 && epochs == 0) {
    throw Error("either num_examples or epochs must be positive");
  }
  noise.validate();
}

nlohmann::json to_json(const LmConfig& c) {
  return {{"arch", to_string(c.arch)},         {"vocab_size", c.vocab_size},
          {"embed_dim", c.embed_dim},          {"hidden_dim", c.hidden_dim},
          {"num_layers", c.num_layers},        {"num_heads", c.num_heads},
          {"max_seq_len", c.max_seq_len}};
}

LmConfig lm_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"arch", "vocab_size", "embed_dim", "hidden_dim",
                       "num_layers", "num_heads", "max_seq_len"},
                      "model config");
  const Arch arch = arch_from_string(j.value("arch", std::string("gru")));
  const std::size_t vocab = j.at("vocab_size").get<std::size_t>();
  LmConfig c = arch == Arch::gru ? LmConfig::gru_default(vocab)
                                 : LmConfig::transformer_default(vocab);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.validate();
  return c;
}

nlohmann::json to_json(const NoiseConfig& c) {
  return {{"token_swap_prob", c.token_swap_prob},
          {"state_dropout_prob", c.state_dropout_prob}};
}

NoiseConfig noise_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"token_swap_prob", "state_dropout_prob"},
                      "noise config");
  NoiseConfig c;
  c.token_swap_prob = j.value("token_swap_prob", 0.0);
  c.state_dropout_prob = j.value("state_dropout_prob", 0.0);
  c.validate();
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1},
          {"beta2", c.beta2},                 {"adam_eps", c.adam_eps},
          {"linear_decay", c.linear_decay},
          {"num_examples", c.num_examples},   {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"max_steps", c.max_steps},
          {"seed", c.seed},                   {"noise", to_json(c.noise)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"learning_rate", "beta1", "beta2", "adam_eps",
                       "linear_decay", "num_examples", "epochs", "batch_size", "max_steps",
                       "seed", "noise"},
                      "training config");
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.linear_decay = j.value("linear_decay", c.linear_decay);
  c.num_examples = j.value("num_examples", c.num_examples);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.seed = j.value("seed", c.seed);
  if (j.contains("noise")) c.noise = noise_config_from_json(j.at("noise"));
  c.validate();
  return c;
}

// --- model ------------------------------------------------------------------

TrainedLm::TrainedLm(const LmConfig& config, std::uint64_t init_seed)
    : config_(config), impl_(std::make_unique<ModelImpl>()) {
  config_.validate();
  Rng rng(init_seed);
  impl_->net = detail::make_network<float>(config_, rng);
  provenance_.seed = init_seed;
}

TrainedLm::~TrainedLm() = default;
TrainedLm::TrainedLm(TrainedLm&&) noexcept = default;
TrainedLm& TrainedLm::operator=(TrainedLm&&) noexcept = default;

std::vector<CategoricalDist> TrainedLm::prefix_dists(
    std::span<const Token> context) const {
  if (context.size() > config_.max_seq_len) {
    throw Error("context of length " + std::to_string(context.size()) +
                " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  std::vector<Token> input;
  input.reserve(context.size() + 1);
  input.push_back(static_cast<Token>(config_.vocab_size));
  for (Token t : context) {
    if (t >= config_.vocab_size) {
      throw Error("context token " + std::to_string(t) +
                  " outside vocabulary of " +
                  std::to_string(config_.vocab_size));
    }
    input.push_back(t);
  }
  const Mat<float> logits = impl_->net->logits(input);
  std::vector<CategoricalDist> out;
  out.reserve(input.size());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    out.push_back(softmax_column(logits, c));
  }
  return out;
}

CategoricalDist TrainedLm::next_dist(std::span<const Token> context) const {
  return prefix_dists(context).back();
}

double TrainedLm::mean_loss(std::span<const TokenSeq> corpus) const {
  const auto examples = build_examples(corpus, config_);
  if (examples.empty()) throw Error("mean_loss: no predictable tokens");
  double total = 0.0;
  std::size_t count = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < examples.size(); i += kChunk) {
    const std::size_t end = std::min(examples.size(), i + kChunk);
    std::span<const Example> chunk(examples.data() + i, end - i);
    std::size_t n = 0;
    for (const auto& ex : chunk) n += ex.target.size();
    total += impl_->net->forward_backward(chunk, 0.0, nullptr, false) *
             static_cast<double>(n);
    count += n;
  }
  return total / static_cast<double>(count);
}

std::vector<ParamRef> TrainedLm::parameters() {
  std::vector<ParamRef> out;
  for (auto& p : impl_->net->params()) out.push_back({p.name, &p.value});
  return out;
}

std::size_t TrainedLm::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : impl_->net->params()) {
    n += static_cast<std::size_t>(p.value.size());
  }
  return n;
}

void TrainedLm::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format"] = "locglob-lm";
  header["config"] = to_json(config_);
  header["provenance"] = provenance_json(provenance_);
  auto& shapes = header["params"] = nlohmann::json::array();
  for (const auto& p : impl_->net->params()) {
    shapes.push_back({{"name", p.name},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()}});
  }
  const std::string text = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  for (const auto& p : impl_->net->params()) {
    const float* data = p.value.data();
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      put_u32(out, std::bit_cast<std::uint32_t>(data[i]));
    }
  }
  io::write_atomic(path, out);
}

TrainedLm TrainedLm::load(const std::filesystem::path& path) {
  const std::string data = io::read_file(path);
  Reader in(data, path.string());
  if (in.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw Error(path.string() + ": not a model checkpoint");
  }
  const auto version = in.uint(4);
  if (version != kCheckpointVersion) {
    throw Error(path.string() + ": unsupported checkpoint version " +
                std::to_string(version));
  }
  const auto header_len = in.uint(8);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": bad checkpoint header: " + e.what());
  }
  TrainedLm lm(lm_config_from_json(header.at("config")), 0);
  lm.provenance_ = provenance_from_json(header.at("provenance"));
  auto& params = lm.impl_->net->params();
  const auto& shapes = header.at("params");
  if (shapes.size() != params.size()) {
    throw Error(path.string() + ": parameter count mismatch");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (shapes[k].at("name") != p.name ||
        shapes[k].at("rows").get<Eigen::Index>() != p.value.rows() ||
        shapes[k].at("cols").get<Eigen::Index>() != p.value.cols()) {
      throw Error(path.string() + ": parameter '" + p.name +
                  "' does not match the model layout");
    }
    float* dst = p.value.data();
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      dst[i] = std::bit_cast<float>(static_cast<std::uint32_t>(in.uint(4)));
    }
  }
  if (!in.done()) throw Error(path.string() + ": trailing bytes in checkpoint");
  return lm;
}

// --- training -----------------------------------------------------------------

TrainedLm train_lm(std::span<const TokenSeq> corpus, const LmConfig& lm_config,
                   const TrainConfig& train_config,
                   const StepCallback& on_step) {
  lm_config.validate();
  train_config.validate();
  std::vector<Example> examples = build_examples(corpus, lm_config);
  if (examples.empty()) throw TrainingError("corpus has nothing to predict");

  const std::uint64_t seed = train_config.seed;
  TrainedLm lm(lm_config, derive_seed(seed, "init"));
  Rng order_rng(derive_seed(seed, "order"));
  Rng noise_rng(derive_seed(seed, "token-noise"));
  Rng dropout_rng(derive_seed(seed, "dropout"));

  const NoiseConfig& noise = train_config.noise;
  std::optional<CategoricalDist> unigram;
  if (noise.token_swap_prob > 0.0) {
    unigram = corpus::token_unigram_dist(
        corpus::count_corpus(corpus, lm_config.vocab_size));
  }

  auto& net = *lm.impl().net;
  auto& params = net.params();
  std::vector<Mat<float>> m1, m2;
  for (const auto& p : params) {
    m1.push_back(Mat<float>::Zero(p.value.rows(), p.value.cols()));
    m2.push_back(Mat<float>::Zero(p.value.rows(), p.value.cols()));
  }

  const std::size_t total = train_config.num_examples > 0
                                ? train_config.num_examples
                                : train_config.epochs * examples.size();
  Provenance& prov = lm.provenance();
  prov.seed = seed;
  prov.corpus_hash = hex64(hash_sequences(corpus));
  prov.noise = noise;
  prov.train_config = to_json(train_config);

  std::size_t planned = 0;  // steps the schedule anneals over
  for (std::size_t left = total; left > 0;) {
    const std::size_t pass = std::min(left, examples.size());
    planned += (pass + train_config.batch_size - 1) / train_config.batch_size;
    left -= pass;
  }
  if (train_config.max_steps > 0) planned = std::min(planned, train_config.max_steps);

  std::size_t seen = 0;
  std::size_t step = 0;
  std::vector<Example> batch;
  const double b1 = train_config.beta1, b2 = train_config.beta2;
  while (seen < total) {
    const auto plan = plan_epoch(examples, train_config.batch_size, order_rng);
    for (std::size_t bi = 0; bi < plan.size() && seen < total; ++bi) {
      if (train_config.max_steps > 0 && step >= train_config.max_steps) break;
      const auto& ids = plan[bi];
      const std::size_t take = std::min(ids.size(), total - seen);
      batch.clear();
      for (std::size_t i = 0; i < take; ++i) {
        Example ex = examples[ids[i]];
        if (unigram) {
          // Inputs only; position 0 is the BOS marker.
          TokenSeq in{{ex.input.begin() + 1, ex.input.end()}, true};
          in = apply_token_noise(in, noise.token_swap_prob, *unigram,
                                 noise_rng);
          std::copy(in.tokens.begin(), in.tokens.end(), ex.input.begin() + 1);
        }
        batch.push_back(std::move(ex));
      }
      const double loss = net.forward_backward(
          batch, noise.state_dropout_prob, &dropout_rng, true);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at step " + std::to_string(step) +
                            " (epoch batch " + std::to_string(bi) + ")");
      }
      ++step;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
      const double decay =
          train_config.linear_decay
              ? std::max(0.0, 1.0 - static_cast<double>(step - 1) /
                                        static_cast<double>(planned))
              : 1.0;
      const auto lr = static_cast<float>(train_config.learning_rate * decay);
      const auto eps = static_cast<float>(train_config.adam_eps);
      const auto fb1 = static_cast<float>(b1), fb2 = static_cast<float>(b2);
      const auto fbc1 = static_cast<float>(bc1);
      const auto fbc2 = static_cast<float>(std::sqrt(bc2));
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& g = params[k].grad;
        m1[k] = fb1 * m1[k] + (1.0f - fb1) * g;
        m2[k] = fb2 * m2[k] + (1.0f - fb2) * g.cwiseAbs2();
        params[k].value.array() -=
            lr * (m1[k].array() / fbc1) /
            (m2[k].array().sqrt() / fbc2 + eps);
      }
      prov.loss_history.push_back(loss);
      seen += take;
      if (on_step) on_step(step, loss);
    }
    if (train_config.max_steps > 0 && step >= train_config.max_steps) break;
  }
  prov.steps = step;
  prov.final_loss = prov.loss_history.empty() ? 0.0 : prov.loss_history.back();
  return lm;
}

// --- noise --------------------------------------------------------------------

TokenSeq apply_token_noise(const TokenSeq& seq, double p_tok,
                           const CategoricalDist& unigram, Rng& rng) {
  check_unit(p_tok, "token_swap_prob");
  TokenSeq out = seq;
  if (p_tok == 0.0) return out;
  for (Token& t : out.tokens) {
    if (rng.bernoulli(p_tok)) {
      t = static_cast<Token>(rng.categorical(unigram.probs()));
    }
  }
  return out;
}

void state_dropout(Eigen::Ref<Eigen::MatrixXf> features, double p_drop,
                   Rng& rng) {
  dropout_impl(features, p_drop, rng);
}

void state_dropout(Eigen::Ref<Eigen::MatrixXd> features, double p_drop,
                   Rng& rng) {
  dropout_impl(features, p_drop, rng);
}

// --- gradient check -------------------------------------------------------------

GradCheckResult grad_check_lm(const LmConfig& config,
                              std::span<const TokenSeq> batch,
                              std::uint64_t seed, double step,
                              const NoiseConfig& noise) {
  config.validate();
  noise.validate();
  const auto examples = build_examples(batch, config);
  if (examples.empty()) throw Error("grad check batch has nothing to predict");
  Rng init(derive_seed(seed, "init"));
  auto net = detail::make_network<double>(config, init);
  const std::uint64_t dropout_seed = derive_seed(seed, "dropout");
  const double p = noise.state_dropout_prob;

  auto loss = [&](bool backward) {
    Rng rng(dropout_seed);
    return net->forward_backward(examples, p, &rng, backward);
  };
  loss(true);
  std::vector<Mat<double>> analytic;
  for (const auto& prm : net->params()) analytic.push_back(prm.grad);

  GradCheckResult result;
  std::set<Token> used;
  for (const auto& ex : examples) used.insert(ex.input.begin(), ex.input.end());
  for (Token t = 0; t < config.output_size(); ++t) {
    if (used.count(t)) continue;
    result.unused_embedding_grad = std::max(
        result.unused_embedding_grad,
        analytic[0].col(static_cast<Eigen::Index>(t)).cwiseAbs().maxCoeff());
  }

  constexpr double kFloor = 1e-6;
  auto& params = net->params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k].value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double orig = value.data()[i];
      value.data()[i] = orig + step;
      const double up = loss(false);
      value.data()[i] = orig - step;
      const double down = loss(false);
      value.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k].data()[i];
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), kFloor});
      ++result.num_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = params[k].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace locglob::lm
