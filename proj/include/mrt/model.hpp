#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mrt/error.hpp"
#include "mrt/param_store.hpp"
#include "mrt/tape.hpp"

namespace mrt {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kUnk = 2;
inline constexpr TokenId kBos = 3;
inline constexpr std::size_t kReservedTokens = 4;

struct SentencePair {
  TokenIds src;
  TokenIds tgt;  // EOS-terminated
  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

/// Drops trailing PAD tokens.
inline std::span<const TokenId> unpadded(std::span<const TokenId> ids) {
  std::size_t n = ids.size();
  while (n > 0 && ids[n - 1] == kPad) --n;
  return ids.first(n);
}

/// Tokens that carry content: EOS, BOS and PAD removed.
inline TokenIds content_tokens(std::span<const TokenId> ids) {
  TokenIds out;
  out.reserve(ids.size());
  for (TokenId t : ids) {
    if (t != kEos && t != kBos && t != kPad) out.push_back(t);
  }
  return out;
}

struct ModelConfig {
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t attention_dim = 32;
  std::size_t max_len = 20;

  void validate() const {
    if (src_vocab_size < kReservedTokens || tgt_vocab_size < kReservedTokens) {
      throw DataError("model config: vocabulary sizes must be at least 4 (reserved tokens)");
    }
    if (embed_dim == 0 || hidden_dim == 0 || attention_dim == 0 || max_len == 0) {
      throw DataError("model config: dimensions and max_len must be at least 1");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"src_vocab_size", c.src_vocab_size}, {"tgt_vocab_size", c.tgt_vocab_size},
                     {"embed_dim", c.embed_dim},           {"hidden_dim", c.hidden_dim},
                     {"attention_dim", c.attention_dim},   {"max_len", c.max_len}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  for (const auto& [key, _] : j.items()) {
    if (key != "src_vocab_size" && key != "tgt_vocab_size" && key != "embed_dim" && key != "hidden_dim" &&
        key != "attention_dim" && key != "max_len") {
      throw DataError("model config: unknown key '" + key + "'");
    }
  }
  j.at("src_vocab_size").get_to(c.src_vocab_size);
  j.at("tgt_vocab_size").get_to(c.tgt_vocab_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("attention_dim").get_to(c.attention_dim);
  j.at("max_len").get_to(c.max_len);
  c.validate();
}

/// Fixed parameter layout of the attentional encoder-decoder.
enum Param : std::size_t {
  kSrcEmbed,
  kTgtEmbed,
  kEncFwdW,
  kEncFwdU,
  kEncFwdUh,
  kEncFwdB,
  kEncBwdW,
  kEncBwdU,
  kEncBwdUh,
  kEncBwdB,
  kInitW,
  kInitB,
  kAttnW,
  kAttnU,
  kAttnV,
  kDecW,
  kDecU,
  kDecUh,
  kDecB,
  kReadoutW,
  kReadoutB,
  kOutW,
  kOutB,
  kParamCount,
};

struct ParamSpec {
  const char* name;
  Shape shape;
  enum class Init { kUniform, kZero } init;
};

inline std::vector<ParamSpec> param_layout(const ModelConfig& c) {
  const std::size_t e = c.embed_dim, h = c.hidden_dim, a = c.attention_dim;
  using I = ParamSpec::Init;
  return {
      {"src_embed", {c.src_vocab_size, e}, I::kUniform},
      {"tgt_embed", {c.tgt_vocab_size, e}, I::kUniform},
      {"enc_fwd.W", {e, 3 * h}, I::kUniform},
      {"enc_fwd.U", {h, 2 * h}, I::kUniform},
      {"enc_fwd.Uh", {h, h}, I::kUniform},
      {"enc_fwd.b", {1, 3 * h}, I::kZero},
      {"enc_bwd.W", {e, 3 * h}, I::kUniform},
      {"enc_bwd.U", {h, 2 * h}, I::kUniform},
      {"enc_bwd.Uh", {h, h}, I::kUniform},
      {"enc_bwd.b", {1, 3 * h}, I::kZero},
      {"init.W", {h, h}, I::kUniform},
      {"init.b", {1, h}, I::kZero},
      {"attn.W", {h, a}, I::kUniform},
      {"attn.U", {2 * h, a}, I::kUniform},
      {"attn.v", {1, a}, I::kUniform},
      {"dec.W", {e + 2 * h, 3 * h}, I::kUniform},
      {"dec.U", {h, 2 * h}, I::kUniform},
      {"dec.Uh", {h, h}, I::kUniform},
      {"dec.b", {1, 3 * h}, I::kZero},
      {"readout.W", {e + 3 * h, h}, I::kUniform},
      {"readout.b", {1, h}, I::kZero},
      {"out.W", {h, c.tgt_vocab_size}, I::kZero},
      {"out.b", {1, c.tgt_vocab_size}, I::kZero},
  };
}

/// Weights uniform in [-0.08, 0.08], biases zero, output projection zero.
inline ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-0.08, 0.08);
  ParamStore store;
  for (const auto& spec : param_layout(config)) {
    Tensor t(spec.shape, 0.0);
    if (spec.init == ParamSpec::Init::kUniform) {
      for (double& v : t.storage()) v = uni(rng);
    }
    store.add(spec.name, std::move(t));
  }
  return store;
}

struct Model {
  ModelConfig config;
  ParamStore params;

  static Model create(const ModelConfig& config, std::uint64_t seed) { return {config, init_params(config, seed)}; }

  /// Throws unless `params` matches the layout implied by `config`.
  void check_layout() const {
    config.validate();
    const auto layout = param_layout(config);
    if (params.count() != layout.size()) throw DataError("model: checkpoint has wrong parameter count");
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (params.name(i) != layout[i].name || params.tensor(i).shape() != layout[i].shape) {
        throw DataError("model: checkpoint parameter '" + params.name(i) + "' does not match the config");
      }
    }
  }

  void save(const std::string& path) const {
    params.save(path);
    std::ofstream out(path + ".json", std::ios::trunc);
    if (!out) throw DataError("model: cannot write '" + path + ".json'");
    out << nlohmann::json(config).dump(2) << '\n';
  }

  static Model load(const std::string& path) {
    std::ifstream in(path + ".json");
    if (!in) throw DataError("model: missing config sidecar '" + path + ".json'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("model: bad config sidecar: " + std::string(e.what()));
    }
    Model m{j.get<ModelConfig>(), ParamStore::load(path)};
    m.check_layout();
    return m;
  }
};

inline void check_token(TokenId id, std::size_t vocab, const char* what) {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
    throw DataError(std::string(what) + ": token id " + std::to_string(id) + " outside vocabulary of size " +
                    std::to_string(vocab));
  }
}

/// Encoder output for one source sentence.
struct Annotations {
  Var states;       // [M, 2H], forward ‖ backward per position
  Var keys;         // [M, A], states projected for attention
  Var first_bwd;    // [1, H], backward state at position 0
  std::size_t length = 0;
};

/// Decoder state after a step; `context`/`attention` are unset initially.
struct StepState {
  Var z;
  Var context;
  Var attention;
};

struct StepOutput {
  Var log_probs;  // [1, V]
  StepState next;
};

namespace detail {

struct GruWeights {
  Var u, uh, b;
};

/// One gated recurrent step given the precomputed input projection `gx` = x·W.
inline Var gru_step(Tape& tape, Var gx, Var h, const GruWeights& w, std::size_t hidden) {
  gx = tape.add(gx, w.b);
  const Var gh = tape.matmul(h, w.u);
  const Var update = tape.sigmoid(tape.add(tape.slice(gx, 0, hidden), tape.slice(gh, 0, hidden)));
  const Var reset = tape.sigmoid(tape.add(tape.slice(gx, hidden, 2 * hidden), tape.slice(gh, hidden, 2 * hidden)));
  const Var candidate =
      tape.tanh(tape.add(tape.slice(gx, 2 * hidden, 3 * hidden), tape.matmul(tape.mul(reset, h), w.uh)));
  return tape.add(h, tape.mul(update, tape.sub(candidate, h)));
}

}  // namespace detail

/// Bidirectional GRU encoder. Trailing PAD is ignored.
inline Annotations encode(const Model& model, std::span<const TokenId> src_in, Tape& tape) {
  const auto src = unpadded(src_in);
  if (src.empty()) throw DataError("encode: empty source sentence");
  const auto& cfg = model.config;
  const auto& p = model.params;
  const std::size_t h = cfg.hidden_dim;
  const std::size_t m = src.size();
  for (TokenId t : src) {
    if (t == kPad) throw DataError("encode: PAD inside source sentence");
    check_token(t, cfg.src_vocab_size, "encode");
  }

  const Var table = tape.param(p, kSrcEmbed);
  std::vector<Var> rows;
  rows.reserve(m);
  for (TokenId t : src) rows.push_back(tape.embedding(table, static_cast<std::size_t>(t)));
  const Var x = m == 1 ? rows[0] : tape.concat(rows, 0);

  const Var zero = tape.constant(Tensor::matrix(1, h));
  auto run = [&](std::size_t w, std::size_t u, std::size_t uh, std::size_t b, bool reverse) {
    const Var gx_all = tape.matmul(x, tape.param(p, w));
    const detail::GruWeights gw{tape.param(p, u), tape.param(p, uh), tape.param(p, b)};
    std::vector<Var> states(m);
    Var state = zero;
    for (std::size_t step = 0; step < m; ++step) {
      const std::size_t pos = reverse ? m - 1 - step : step;
      state = detail::gru_step(tape, tape.row(gx_all, pos), state, gw, h);
      states[pos] = state;
    }
    return states;
  };
  const auto fwd = run(kEncFwdW, kEncFwdU, kEncFwdUh, kEncFwdB, false);
  const auto bwd = run(kEncBwdW, kEncBwdU, kEncBwdUh, kEncBwdB, true);

  std::vector<Var> ann_rows;
  ann_rows.reserve(m);
  for (std::size_t i = 0; i < m; ++i) ann_rows.push_back(tape.concat({fwd[i], bwd[i]}));
  Annotations ann;
  ann.states = m == 1 ? ann_rows[0] : tape.concat(ann_rows, 0);
  ann.keys = tape.matmul(ann.states, tape.param(p, kAttnU));
  ann.first_bwd = bwd[0];
  ann.length = m;
  return ann;
}

inline StepState initial_state(const Model& model, const Annotations& ann, Tape& tape) {
  const auto& p = model.params;
  StepState s;
  s.z = tape.tanh(tape.add(tape.matmul(ann.first_bwd, tape.param(p, kInitW)), tape.param(p, kInitB)));
  return s;
}

/// One decoder step: attend with the previous state, advance the GRU on
/// [embedding(prev_word), context], then read out a log-distribution.
inline StepOutput decode_step(const Model& model, TokenId prev_word, const StepState& prev, const Annotations& ann,
                              Tape& tape) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  check_token(prev_word, cfg.tgt_vocab_size, "decode_step");
  const std::size_t h = cfg.hidden_dim;

  const Var emb = tape.embedding(tape.param(p, kTgtEmbed), static_cast<std::size_t>(prev_word));

  const Var query = tape.matmul(prev.z, tape.param(p, kAttnW));
  const Var energy = tape.tanh(tape.add(ann.keys, query));
  const Var scores = tape.matmul_nt(tape.param(p, kAttnV), energy);
  const Var attention = tape.softmax(scores);
  const Var context = tape.matmul(attention, ann.states);

  const Var x = tape.concat({emb, context});
  const Var gx = tape.matmul(x, tape.param(p, kDecW));
  const detail::GruWeights gw{tape.param(p, kDecU), tape.param(p, kDecUh), tape.param(p, kDecB)};
  const Var z = detail::gru_step(tape, gx, prev.z, gw, h);

  const Var readout = tape.tanh(
      tape.add(tape.matmul(tape.concat({emb, z, context}), tape.param(p, kReadoutW)), tape.param(p, kReadoutB)));
  const Var logits = tape.add(tape.matmul(readout, tape.param(p, kOutW)), tape.param(p, kOutB));
  return {tape.log_softmax(logits), StepState{z, context, attention}};
}

/// Probabilities of a step's log-distribution.
inline std::vector<double> step_distribution(const Tape& tape, const StepOutput& step) {
  const auto lp = tape.value(step.log_probs).values();
  std::vector<double> out(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) out[i] = std::exp(lp[i]);
  return out;
}

/// Records log P(tokens | src) on `tape`, returning the scalar total and the
/// per-word scalars. `tokens` need not end with EOS.
inline Var score_tokens(const Model& model, const Annotations& ann, std::span<const TokenId> tokens, Tape& tape,
                        std::vector<Var>* per_word = nullptr) {
  if (tokens.empty()) throw DataError("score_tokens: empty target");
  StepState state = initial_state(model, ann, tape);
  TokenId prev = kBos;
  std::vector<Var> picks;
  picks.reserve(tokens.size());
  for (TokenId t : tokens) {
    check_token(t, model.config.tgt_vocab_size, "score_tokens");
    StepOutput step = decode_step(model, prev, state, ann, tape);
    picks.push_back(tape.pick(step.log_probs, 0, static_cast<std::size_t>(t)));
    state = step.next;
    prev = t;
  }
  if (per_word) *per_word = picks;
  return picks.size() == 1 ? picks[0] : tape.sum(tape.concat(picks));
}

struct SequenceLogProb {
  double total = 0.0;
  std::vector<double> per_word;
};

/// log P(tgt | src) for an EOS-terminated target; trailing PAD is masked.
inline SequenceLogProb sequence_logprob(const Model& model, std::span<const TokenId> src,
                                        std::span<const TokenId> tgt_in) {
  const auto tgt = unpadded(tgt_in);
  if (tgt.empty() || tgt.back() != kEos) throw DataError("sequence_logprob: target does not end with EOS");
  Tape tape;
  const Annotations ann = encode(model, src, tape);
  std::vector<Var> words;
  const Var total = score_tokens(model, ann, tgt, tape, &words);
  SequenceLogProb out;
  out.total = tape.value(total).item();
  out.per_word.reserve(words.size());
  for (Var w : words) out.per_word.push_back(tape.value(w).item());
  if (!std::isfinite(out.total)) throw NumericError("sequence_logprob: non-finite log-probability");
  return out;
}

}  // namespace mrt
