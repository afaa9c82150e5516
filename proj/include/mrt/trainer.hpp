#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrt/data.hpp"
#include "mrt/decoder.hpp"
#include "mrt/error.hpp"
#include "mrt/metrics.hpp"
#include "mrt/minimum_risk.hpp"
#include "mrt/model.hpp"
#include "mrt/random.hpp"

namespace mrt {

enum class Criterion { kMle, kMrt };
enum class Optimizer { kSgd, kAdam };

inline Criterion parse_criterion(std::string_view s) {
  if (s == "mle" || s == "MLE") return Criterion::kMle;
  if (s == "mrt" || s == "MRT") return Criterion::kMrt;
  throw DataError("unknown criterion '" + std::string(s) + "' (mle, mrt)");
}

inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "adam") return Optimizer::kAdam;
  throw DataError("unknown optimizer '" + std::string(s) + "' (sgd, adam)");
}

struct TrainConfig {
  Criterion criterion = Criterion::kMle;
  std::size_t batch_size = 80;
  std::optional<double> learning_rate;  // unset: 0.5 for MLE, 0.05 for MRT
  double grad_clip_norm = 1.0;
  std::size_t max_updates = 1000;
  std::size_t eval_every = 100;
  double alpha = kDefaultAlpha;
  std::size_t k = kDefaultSampleSize;
  LossKind loss_kind = LossKind::kNegSmoothedBleu;
  std::uint64_t seed = 1;
  std::string init_checkpoint;
  bool allow_random_init = false;
  Optimizer optimizer = Optimizer::kSgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t beam = kDefaultBeamWidth;
  std::size_t workers = 1;
  std::optional<double> stop_at_bleu;  // end training once validation BLEU reaches this

  double lr() const { return learning_rate.value_or(criterion == Criterion::kMle ? 0.5 : 0.05); }

  void validate() const {
    if (batch_size == 0) throw DataError("train config: batch_size must be at least 1");
    if (!(lr() > 0.0)) throw DataError("train config: learning_rate must be positive");
    if (!(grad_clip_norm > 0.0)) throw DataError("train config: grad_clip_norm must be positive");
    if (eval_every == 0) throw DataError("train config: eval_every must be at least 1");
    if (!(alpha > 0.0)) throw DataError("train config: alpha must be positive");
    if (k == 0) throw DataError("train config: k must be at least 1");
    if (beam == 0) throw DataError("train config: beam must be at least 1");
    if (criterion == Criterion::kMrt && init_checkpoint.empty() && !allow_random_init) {
      throw DataError("train config: MRT needs init_checkpoint (or allow_random_init)");
    }
  }
};

inline const char* criterion_name(Criterion c) { return c == Criterion::kMle ? "mle" : "mrt"; }
inline const char* optimizer_name(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "adam"; }

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"criterion", criterion_name(c.criterion)},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.lr()},
                     {"grad_clip_norm", c.grad_clip_norm},
                     {"max_updates", c.max_updates},
                     {"eval_every", c.eval_every},
                     {"alpha", c.alpha},
                     {"k", c.k},
                     {"loss_kind", std::string(loss_kind_name(c.loss_kind))},
                     {"seed", c.seed},
                     {"init_checkpoint", c.init_checkpoint},
                     {"allow_random_init", c.allow_random_init},
                     {"optimizer", optimizer_name(c.optimizer)},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_epsilon", c.adam_epsilon},
                     {"beam", c.beam},
                     {"workers", c.workers}};
  if (c.stop_at_bleu) j["stop_at_bleu"] = *c.stop_at_bleu;
}

inline const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys{"criterion", "batch_size",   "learning_rate",   "grad_clip_norm",
                                             "max_updates", "eval_every", "alpha",           "k",
                                             "loss_kind",  "seed",        "init_checkpoint", "allow_random_init",
                                             "optimizer",  "adam_beta1",  "adam_beta2",      "adam_epsilon",
                                             "beam",       "workers",     "stop_at_bleu"};
  return keys;
}

/// Reads the keys present in `j`; others keep their current values.
inline void apply_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    if (j.contains("criterion")) c.criterion = parse_criterion(j["criterion"].get<std::string>());
    if (j.contains("batch_size")) j["batch_size"].get_to(c.batch_size);
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("grad_clip_norm")) j["grad_clip_norm"].get_to(c.grad_clip_norm);
    if (j.contains("max_updates")) j["max_updates"].get_to(c.max_updates);
    if (j.contains("eval_every")) j["eval_every"].get_to(c.eval_every);
    if (j.contains("alpha")) j["alpha"].get_to(c.alpha);
    if (j.contains("k")) j["k"].get_to(c.k);
    if (j.contains("loss_kind")) c.loss_kind = parse_loss_kind(j["loss_kind"].get<std::string>());
    if (j.contains("seed")) j["seed"].get_to(c.seed);
    if (j.contains("init_checkpoint")) j["init_checkpoint"].get_to(c.init_checkpoint);
    if (j.contains("allow_random_init")) j["allow_random_init"].get_to(c.allow_random_init);
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j["optimizer"].get<std::string>());
    if (j.contains("adam_beta1")) j["adam_beta1"].get_to(c.adam_beta1);
    if (j.contains("adam_beta2")) j["adam_beta2"].get_to(c.adam_beta2);
    if (j.contains("adam_epsilon")) j["adam_epsilon"].get_to(c.adam_epsilon);
    if (j.contains("beam")) j["beam"].get_to(c.beam);
    if (j.contains("workers")) j["workers"].get_to(c.workers);
    if (j.contains("stop_at_bleu")) c.stop_at_bleu = j["stop_at_bleu"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("train config: ") + e.what());
  }
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const auto& keys = train_config_keys();
  for (const auto& [key, _] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw DataError("train config: unknown key '" + key + "'");
    }
  }
  apply_json(j, c);
}

/// Decoding and sampling step limit: the longest target plus EOS.
inline std::size_t step_limit(const Model& m) { return m.config.max_len + 1; }

// ---- optimizer ----

inline double global_norm(std::span<const double> g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

/// Rescales `g` so its global norm is at most `max_norm`; returns the norm
/// before clipping.
inline double clip_global_norm(std::vector<double>& g, double max_norm) {
  const double n = global_norm(g);
  if (n > max_norm) {
    const double s = max_norm / n;
    for (double& v : g) v *= s;
  }
  return n;
}

class OptimizerState {
 public:
  OptimizerState(const TrainConfig& c, std::size_t n) : cfg_(c) {
    if (c.optimizer == Optimizer::kAdam) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
  }

  void step(ParamStore& params, std::span<const double> g) {
    const double lr = cfg_.lr();
    if (cfg_.optimizer == Optimizer::kSgd) {
      params.axpy(-lr, g);
      return;
    }
    ++t_;
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < g.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * g[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * g[i] * g[i];
      params.flat(i) -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.adam_epsilon);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// ---- evaluation ----

struct Scores {
  double bleu = 0.0;
  double ter = 0.0;
  double nist = 0.0;
};

inline std::vector<TokenIds> flatten_references(const std::vector<std::vector<TokenIds>>& refs) {
  std::vector<TokenIds> out;
  for (const auto& set : refs) out.insert(out.end(), set.begin(), set.end());
  return out;
}

/// Corpus scores of `hyps`. NIST information weights come from the
/// references themselves.
inline Scores score_corpus(std::span<const TokenIds> hyps, const std::vector<std::vector<TokenIds>>& refs) {
  Scores s;
  s.bleu = corpus_bleu(hyps, refs);
  s.ter = corpus_ter(hyps, refs);
  const InfoTable table = build_info_table(flatten_references(refs));
  s.nist = corpus_nist(hyps, refs, table);
  return s;
}

inline void check_vocab_sizes(const Model& model, std::size_t src_vocab, std::size_t tgt_vocab) {
  if (model.config.src_vocab_size != src_vocab || model.config.tgt_vocab_size != tgt_vocab) {
    throw DataError("vocabulary mismatch: checkpoint expects " + std::to_string(model.config.src_vocab_size) + "/" +
                    std::to_string(model.config.tgt_vocab_size) + " ids, vocab files have " +
                    std::to_string(src_vocab) + "/" + std::to_string(tgt_vocab));
  }
}

inline Scores evaluate_checkpoint(const Model& model, const Corpus& corpus, std::size_t beam, std::size_t workers = 1) {
  if (corpus.size() == 0) throw DataError("evaluate: empty corpus");
  const auto hyps = decode_corpus(model, corpus.sources(), BeamOptions{beam, step_limit(model), true}, workers);
  return score_corpus(hyps, corpus.references);
}

inline double valid_bleu(const Model& model, const Corpus& valid, std::size_t beam, std::size_t workers) {
  const auto hyps = decode_corpus(model, valid.sources(), BeamOptions{beam, step_limit(model), true}, workers);
  return corpus_bleu(hyps, valid.references);
}

// ---- training ----

struct CurvePoint {
  std::size_t update = 0;
  double seconds = 0.0;
  double valid_bleu = 0.0;
  double train_objective = 0.0;  // mean NLL (MLE) or mean expected risk (MRT) over the window
};

inline constexpr const char* kCurveHeader = "update,seconds,valid_bleu,train_objective";

inline std::string curve_csv(const std::vector<CurvePoint>& curve, bool with_seconds = true) {
  std::ostringstream out;
  out << kCurveHeader << '\n';
  char buf[128];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.3f,%.6f,%.9f\n", p.update, with_seconds ? p.seconds : 0.0, p.valid_bleu,
                  p.train_objective);
    out << buf;
  }
  return out.str();
}

struct TrainResult {
  Model best;
  Model last;  // parameters after the final update
  std::size_t best_update = 0;
  double best_bleu = 0.0;
  double initial_bleu = 0.0;
  std::vector<CurvePoint> curve;
};

/// Epoch-shuffled order of corpus indices.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = stream_rng(seed, 0xe90c4, epoch);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct UpdateResult {
  double objective = 0.0;  // batch mean
  std::vector<double> grad;
};

inline std::string describe_batch(const Corpus& corpus, std::span<const std::size_t> ids) {
  std::ostringstream out;
  for (std::size_t i : ids) {
    out << "\n  #" << i << " src:";
    for (TokenId t : corpus.pairs[i].src) out << ' ' << t;
    out << " tgt:";
    for (TokenId t : corpus.pairs[i].tgt) out << ' ' << t;
  }
  return out.str();
}

/// Criterion gradient for one batch, averaged over its sentences. Sentences
/// may run on several workers; the reduction is in batch order.
inline UpdateResult batch_gradient(const Model& model, const Corpus& corpus, std::span<const std::size_t> ids,
                                   const TrainConfig& cfg, const LossFunction& loss, std::size_t update) {
  const std::size_t n = ids.size();
  std::vector<std::vector<double>> grads(n);
  std::vector<double> objectives(n, 0.0);
  const MrtOptions mrt{cfg.k, cfg.alpha, step_limit(model)};
  try {
    parallel_for(n, cfg.workers, [&](std::size_t j) {
      const SentencePair& pair = corpus.pairs[ids[j]];
      if (cfg.criterion == Criterion::kMle) {
        MleResult r = mle_loss_and_grad(model, std::span<const SentencePair>(&pair, 1));
        objectives[j] = r.loss;
        grads[j] = std::move(r.grad);
      } else {
        Rng rng = stream_rng(cfg.seed, ids[j], update);
        SentenceRisk r = mrt_sentence(model, pair, mrt, loss, rng);
        objectives[j] = r.report.expected_risk;
        grads[j] = std::move(r.grad);
      }
    });
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at update " + std::to_string(update) + "; batch:" +
                       describe_batch(corpus, ids));
  }
  UpdateResult out;
  out.grad.assign(model.params.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    out.objective += objectives[j] * inv;
    for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] += grads[j][k] * inv;
  }
  if (!std::isfinite(out.objective) || !std::all_of(out.grad.begin(), out.grad.end(),
                                                    [](double v) { return std::isfinite(v); })) {
    throw NumericError("non-finite " + std::string(cfg.criterion == Criterion::kMle ? "loss" : "risk") +
                       " or gradient at update " + std::to_string(update) + "; batch:" + describe_batch(corpus, ids));
  }
  return out;
}

/// Runs `cfg.max_updates` updates from `init`, evaluating on `valid` every
/// `eval_every` updates (and after the last) and keeping the checkpoint with
/// the best validation BLEU. The initial model is the first candidate.
inline TrainResult train(const TrainConfig& cfg, const Model& init, const Corpus& train_set, const Corpus& valid,
                         const LossFunction& loss, std::ostream* log = nullptr) {
  cfg.validate();
  TrainResult out;
  out.best = init;
  out.last = init;
  if (cfg.max_updates == 0) return out;
  if (train_set.size() == 0 || valid.size() == 0) throw DataError("train: empty training or validation corpus");

  const auto start = std::chrono::steady_clock::now();
  Model model = init;
  OptimizerState opt(cfg, model.params.size());
  out.initial_bleu = valid_bleu(model, valid, cfg.beam, cfg.workers);
  out.best_bleu = out.initial_bleu;
  if (log) *log << "update 0 valid_bleu " << out.initial_bleu << '\n';

  std::size_t epoch = 0, cursor = 0;
  std::vector<std::size_t> order = epoch_order(train_set.size(), cfg.seed, epoch);
  double window = 0.0;
  std::size_t window_n = 0;
  for (std::size_t update = 1; update <= cfg.max_updates; ++update) {
    if (cursor >= order.size()) {
      order = epoch_order(train_set.size(), cfg.seed, ++epoch);
      cursor = 0;
    }
    const std::size_t end = std::min(order.size(), cursor + cfg.batch_size);
    const std::span<const std::size_t> ids(order.data() + cursor, end - cursor);
    cursor = end;

    UpdateResult r = batch_gradient(model, train_set, ids, cfg, loss, update);
    clip_global_norm(r.grad, cfg.grad_clip_norm);
    opt.step(model.params, r.grad);
    window += r.objective;
    ++window_n;

    if (update % cfg.eval_every == 0 || update == cfg.max_updates) {
      CurvePoint p;
      p.update = update;
      p.valid_bleu = valid_bleu(model, valid, cfg.beam, cfg.workers);
      p.train_objective = window / static_cast<double>(window_n);
      p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      out.curve.push_back(p);
      window = 0.0;
      window_n = 0;
      if (p.valid_bleu > out.best_bleu) {
        out.best_bleu = p.valid_bleu;
        out.best_update = update;
        out.best = model;
      }
      if (log) {
        *log << "update " << update << " valid_bleu " << p.valid_bleu << " objective " << p.train_objective
             << " seconds " << p.seconds << '\n';
      }
      if (cfg.stop_at_bleu && p.valid_bleu >= *cfg.stop_at_bleu) break;
    }
  }
  out.last = std::move(model);
  return out;
}

/// Mean fixed-space expected risk of a model over a corpus (one sample set
/// per sentence, drawn with `seed`).
inline double mean_training_risk(const Model& model, const Corpus& corpus, const TrainConfig& cfg,
                                 const LossFunction& loss, std::uint64_t seed) {
  std::vector<double> risks(corpus.size());
  const MrtOptions mrt{cfg.k, cfg.alpha, step_limit(model)};
  parallel_for(corpus.size(), cfg.workers, [&](std::size_t i) {
    Rng rng = stream_rng(seed, i, 0);
    const auto& pair = corpus.pairs[i];
    const SampledSpace s = sample_space(model, pair.src, pair.tgt, mrt.k, mrt.max_len, rng);
    risks[i] = expected_risk(s, q_distribution(s, mrt.alpha), candidate_losses(s, pair.tgt, loss)).expected_risk;
  });
  return std::accumulate(risks.begin(), risks.end(), 0.0) / static_cast<double>(risks.size());
}

}  // namespace mrt
