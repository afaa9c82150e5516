#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mrt/error.hpp"
#include "mrt/metrics.hpp"
#include "mrt/model.hpp"
#include "mrt/random.hpp"
#include "mrt/tape.hpp"

namespace mrt {

inline constexpr double kDefaultAlpha = 5e-3;
inline constexpr std::size_t kDefaultSampleSize = 100;

/// Deduplicated candidate set for one sentence, gold first.
struct SampledSpace {
  std::vector<TokenIds> candidates;
  std::vector<double> logprobs;  // log P(candidate | src) under the sampling params
  std::size_t gold_index = 0;
  std::size_t k_requested = 0;
  std::size_t max_len = 0;
  /// Candidate index hit by each sampling attempt, in draw order.
  std::vector<std::size_t> attempts;

  std::size_t size() const noexcept { return candidates.size(); }
};

struct QDistribution {
  std::vector<double> weights;
  std::vector<double> logprobs;
  double alpha = kDefaultAlpha;
};

struct RiskReport {
  std::vector<double> deltas;
  double expected_risk = 0.0;
  double baseline = 0.0;
  std::vector<double> advantages;
};

/// Ancestral sampling of `k` trajectories (each stops at EOS or after `l`
/// words), merged with the gold translation. Duplicates keep their first
/// position; a trajectory that hits `l` without EOS is kept unterminated.
inline SampledSpace sample_space(const Model& model, std::span<const TokenId> src, std::span<const TokenId> gold_in,
                                 std::size_t k, std::size_t l, Rng& rng) {
  if (k == 0 || l == 0) throw DataError("sample_space: k and l must be at least 1");
  const auto gold = unpadded(gold_in);
  if (gold.empty()) throw DataError("sample_space: empty gold translation");

  SampledSpace space;
  space.k_requested = k;
  space.max_len = l;
  space.attempts.reserve(k);

  Tape tape;
  const Annotations ann = encode(model, src, tape);
  const StepState init = initial_state(model, ann, tape);
  const std::size_t base = tape.mark();

  std::map<TokenIds, std::size_t> seen;
  space.candidates.emplace_back(gold.begin(), gold.end());
  space.logprobs.push_back(tape.value(score_tokens(model, ann, gold, tape)).item());
  seen.emplace(space.candidates.back(), 0);

  TokenIds y;
  for (std::size_t attempt = 0; attempt < k; ++attempt) {
    tape.rewind(base);
    y.clear();
    double lp = 0.0;
    StepState state = init;
    TokenId prev = kBos;
    for (std::size_t n = 0; n < l; ++n) {
      const StepOutput step = decode_step(model, prev, state, ann, tape);
      const auto logp = tape.value(step.log_probs).values();
      std::vector<double> probs(logp.size());
      for (std::size_t i = 0; i < logp.size(); ++i) probs[i] = std::exp(logp[i]);
      const auto word = static_cast<TokenId>(sample_categorical(probs, rng));
      lp += logp[static_cast<std::size_t>(word)];
      y.push_back(word);
      if (word == kEos) break;
      state = step.next;
      prev = word;
    }
    auto [it, inserted] = seen.emplace(y, space.candidates.size());
    if (inserted) {
      space.candidates.push_back(y);
      space.logprobs.push_back(lp);
    }
    space.attempts.push_back(it->second);
  }
  return space;
}

/// Q(y) ∝ P(y)^alpha over the listed log-probabilities, normalized in log space.
inline QDistribution q_distribution(std::span<const double> logprobs, double alpha) {
  if (!(alpha > 0.0)) throw DataError("q_distribution: alpha must be positive");
  if (logprobs.empty()) throw DataError("q_distribution: empty candidate set");
  QDistribution q;
  q.alpha = alpha;
  q.logprobs.assign(logprobs.begin(), logprobs.end());
  double mx = -std::numeric_limits<double>::infinity();
  for (double lp : logprobs) {
    if (!std::isfinite(lp)) throw NumericError("q_distribution: non-finite log-probability");
    mx = std::max(mx, alpha * lp);
  }
  // shifted by the max so the largest term is exactly 1
  double z = 0.0;
  q.weights.reserve(logprobs.size());
  for (double lp : logprobs) {
    q.weights.push_back(std::exp(alpha * lp - mx));
    z += q.weights.back();
  }
  for (double& w : q.weights) w /= z;
  return q;
}

inline QDistribution q_distribution(const SampledSpace& space, double alpha) {
  return q_distribution(space.logprobs, alpha);
}

/// Expected loss under Q plus the baseline-subtracted advantages.
inline RiskReport expected_risk(const QDistribution& q, std::span<const double> losses) {
  if (losses.size() != q.weights.size()) {
    throw DataError("expected_risk: " + std::to_string(losses.size()) + " losses for " +
                    std::to_string(q.weights.size()) + " candidates");
  }
  RiskReport r;
  r.deltas.assign(losses.begin(), losses.end());
  for (std::size_t i = 0; i < losses.size(); ++i) r.expected_risk += q.weights[i] * losses[i];
  r.baseline = r.expected_risk;
  r.advantages.reserve(losses.size());
  for (double d : losses) r.advantages.push_back(d - r.baseline);
  return r;
}

inline RiskReport expected_risk(const SampledSpace& space, const QDistribution& q, std::span<const double> losses) {
  if (space.size() != q.weights.size()) throw DataError("expected_risk: Q does not belong to this space");
  return expected_risk(q, losses);
}

inline std::vector<double> candidate_losses(const SampledSpace& space, std::span<const TokenId> gold,
                                            const LossFunction& loss) {
  std::vector<double> out;
  out.reserve(space.size());
  for (const auto& c : space.candidates) out.push_back(loss(c, gold));
  return out;
}

/// ∂R̃/∂θ for a fixed candidate set:
/// alpha · Σ_i Q_i · (Δ_i − E_Q[Δ]) · ∇ log P(y_i | x).
inline std::vector<double> mrt_grad(const Model& model, std::span<const TokenId> src,
                                    std::span<const TokenIds> candidates, const QDistribution& q,
                                    const RiskReport& report, double alpha) {
  if (candidates.size() != q.weights.size() || candidates.size() != report.advantages.size()) {
    throw DataError("mrt_grad: space, Q and report disagree on candidate count");
  }
  std::vector<double> grad(model.params.size(), 0.0);
  if (candidates.size() < 2) return grad;
  Tape tape;
  const Annotations ann = encode(model, src, tape);
  std::vector<Var> terms;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double coeff = alpha * q.weights[i] * report.advantages[i];
    if (coeff == 0.0) continue;
    terms.push_back(tape.scale(score_tokens(model, ann, candidates[i], tape), coeff));
  }
  if (terms.empty()) return grad;
  const Var objective = terms.size() == 1 ? terms[0] : tape.sum(tape.concat(terms));
  return tape.backward(objective);
}

inline std::vector<double> mrt_grad(const Model& model, std::span<const TokenId> src, const SampledSpace& space,
                                    const QDistribution& q, const RiskReport& report, double alpha) {
  return mrt_grad(model, src, space.candidates, q, report, alpha);
}

struct RiskAndGrad {
  double risk = 0.0;
  std::vector<double> grad;
};

/// Second route to the same gradient: differentiates Σ_i softmax(alpha·logP)_i · Δ_i
/// through the recorded log-space normalization.
inline RiskAndGrad mrt_grad_through_q(const Model& model, std::span<const TokenId> src,
                                      std::span<const TokenIds> candidates, std::span<const double> losses,
                                      double alpha) {
  if (candidates.size() != losses.size()) throw DataError("mrt_grad_through_q: loss count mismatch");
  if (candidates.empty()) throw DataError("mrt_grad_through_q: empty candidate set");
  Tape tape;
  const Annotations ann = encode(model, src, tape);
  std::vector<Var> lps;
  lps.reserve(candidates.size());
  for (const auto& c : candidates) lps.push_back(score_tokens(model, ann, c, tape));
  const Var row = lps.size() == 1 ? lps[0] : tape.concat(lps);
  const Var q = tape.softmax(tape.scale(row, alpha));
  const Var d = tape.constant(Tensor({losses.size(), 1}, std::vector<double>(losses.begin(), losses.end())));
  const Var risk = tape.matmul(q, d);
  RiskAndGrad out;
  out.risk = tape.value(risk).item();
  out.grad = tape.backward(risk);
  out.grad.resize(model.params.size(), 0.0);
  return out;
}

struct MleResult {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Negative log-likelihood summed over the batch and its gradient. PAD
/// after EOS is masked.
inline MleResult mle_loss_and_grad(const Model& model, std::span<const SentencePair> batch) {
  if (batch.empty()) throw DataError("mle_loss_and_grad: empty batch");
  MleResult out;
  out.grad.assign(model.params.size(), 0.0);
  for (const auto& pair : batch) {
    const auto tgt = unpadded(pair.tgt);
    if (tgt.empty() || tgt.back() != kEos) throw DataError("mle_loss_and_grad: target does not end with EOS");
    Tape tape;
    const Annotations ann = encode(model, pair.src, tape);
    const Var lp = score_tokens(model, ann, tgt, tape);
    out.loss -= tape.value(lp).item();
    const auto g = tape.backward(lp);
    for (std::size_t k = 0; k < g.size(); ++k) out.grad[k] -= g[k];
  }
  if (!std::isfinite(out.loss)) throw NumericError("mle_loss_and_grad: non-finite loss");
  return out;
}

struct MrtOptions {
  std::size_t k = kDefaultSampleSize;
  double alpha = kDefaultAlpha;
  std::size_t max_len = 20;
};

struct SentenceRisk {
  SampledSpace space;
  QDistribution q;
  RiskReport report;
  std::vector<double> grad;
};

/// Sampling, Q, risk and gradient for one training pair.
inline SentenceRisk mrt_sentence(const Model& model, const SentencePair& pair, const MrtOptions& opt,
                                 const LossFunction& loss, Rng& rng) {
  SentenceRisk out;
  out.space = sample_space(model, pair.src, pair.tgt, opt.k, opt.max_len, rng);
  out.q = q_distribution(out.space, opt.alpha);
  out.report = expected_risk(out.space, out.q, candidate_losses(out.space, pair.tgt, loss));
  out.grad = mrt_grad(model, pair.src, out.space, out.q, out.report, opt.alpha);
  return out;
}

}  // namespace mrt
