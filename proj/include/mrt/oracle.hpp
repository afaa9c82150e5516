#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mrt/error.hpp"
#include "mrt/gradcheck.hpp"
#include "mrt/minimum_risk.hpp"
#include "mrt/model.hpp"
#include "mrt/random.hpp"

namespace mrt {

inline constexpr std::size_t kEnumerationBudget = 1'000'000;

/// Every EOS-terminated sequence of at most `max_len` tokens (EOS included)
/// over the content vocabulary, with exact model probabilities.
struct FullSpace {
  std::vector<TokenIds> sequences;
  std::vector<double> logprobs;
  std::vector<double> probs;
  double terminated_mass = 0.0;
  std::size_t max_len = 0;

  std::size_t size() const noexcept { return sequences.size(); }
};

/// Σ_{n=0}^{l-1} v^n, or SIZE_MAX past `cap`.
inline std::size_t full_space_count(std::size_t content_vocab, std::size_t max_len,
                                    std::size_t cap = std::numeric_limits<std::size_t>::max()) {
  std::size_t total = 0, level = 1;
  for (std::size_t n = 0; n < max_len; ++n) {
    total += level;
    if (total > cap) return std::numeric_limits<std::size_t>::max();
    if (n + 1 < max_len) {
      if (content_vocab != 0 && level > cap / content_vocab) return std::numeric_limits<std::size_t>::max();
      level *= content_vocab;
    }
  }
  return total;
}

inline FullSpace enumerate_space(const Model& model, std::span<const TokenId> src, std::size_t max_len,
                                 std::size_t budget = kEnumerationBudget) {
  if (max_len == 0) throw DataError("enumerate_space: max_len must be at least 1");
  const std::size_t content = model.config.tgt_vocab_size - kReservedTokens;
  const std::size_t count = full_space_count(content, max_len);
  if (count > budget) {
    throw DataError("enumerate_space: " +
                    (count == std::numeric_limits<std::size_t>::max() ? std::string("too many") : std::to_string(count)) +
                    " sequences exceed the budget of " + std::to_string(budget));
  }
  FullSpace space;
  space.max_len = max_len;
  space.sequences.reserve(count);
  space.logprobs.reserve(count);

  Tape tape;
  const Annotations ann = encode(model, src, tape);
  TokenIds prefix;
  std::function<void(const StepState&, TokenId, double)> visit = [&](const StepState& state, TokenId prev,
                                                                     double lp_prefix) {
    const StepOutput step = decode_step(model, prev, state, ann, tape);
    const Tensor logp = tape.value(step.log_probs);
    prefix.push_back(kEos);
    space.sequences.push_back(prefix);
    space.logprobs.push_back(lp_prefix + logp[kEos]);
    prefix.pop_back();
    if (prefix.size() + 1 >= max_len) return;
    const std::size_t mark = tape.mark();
    for (std::size_t c = kReservedTokens; c < model.config.tgt_vocab_size; ++c) {
      prefix.push_back(static_cast<TokenId>(c));
      visit(step.next, static_cast<TokenId>(c), lp_prefix + logp[c]);
      prefix.pop_back();
      tape.rewind(mark);
    }
  };
  visit(initial_state(model, ann, tape), kBos, 0.0);

  space.probs.reserve(space.size());
  for (double lp : space.logprobs) {
    space.probs.push_back(std::exp(lp));
    space.terminated_mass += space.probs.back();
  }
  return space;
}

inline std::vector<double> full_space_losses(const FullSpace& space, std::span<const TokenId> gold,
                                             const LossFunction& loss) {
  std::vector<double> out;
  out.reserve(space.size());
  for (const auto& s : space.sequences) out.push_back(loss(s, gold));
  return out;
}

/// Σ_y Q_full(y) Δ(y, gold) with Q_full ∝ P^alpha over the whole enumeration.
inline double exact_risk(const FullSpace& space, std::span<const double> losses, double alpha) {
  const QDistribution q = q_distribution(space.logprobs, alpha);
  return expected_risk(q, losses).expected_risk;
}

inline double exact_risk(const FullSpace& space, std::span<const TokenId> gold, const LossFunction& loss,
                         double alpha) {
  return exact_risk(space, full_space_losses(space, gold, loss), alpha);
}

inline double exact_risk(const FullSpace& space, std::span<const TokenId> gold, LossKind kind, double alpha,
                         const InfoTable* info = nullptr) {
  return exact_risk(space, gold, make_loss(kind, info), alpha);
}

struct GradCheck {
  double max_relative_error = 0.0;
  std::vector<double> analytic;  // mrt_grad over the full space
  std::vector<double> numeric;   // central differences of exact_risk
};

/// Compares the risk gradient evaluated over the complete enumeration with
/// finite differences of the exact risk.
inline GradCheck exact_grad_check(const Model& model, std::span<const TokenId> src, std::span<const TokenId> gold,
                                  const LossFunction& loss, double alpha, std::size_t max_len,
                                  double step = kDefaultFiniteDiffStep) {
  const FullSpace space = enumerate_space(model, src, max_len);
  const auto losses = full_space_losses(space, gold, loss);
  const QDistribution q = q_distribution(space.logprobs, alpha);
  const RiskReport report = expected_risk(q, losses);
  GradCheck out;
  out.analytic = mrt_grad(model, src, space.sequences, q, report, alpha);
  out.numeric = finite_diff_grad(
      [&](const ParamStore& p) {
        const Model perturbed{model.config, p};
        return exact_risk(enumerate_space(perturbed, src, max_len), losses, alpha);
      },
      model.params, step);
  out.max_relative_error = max_relative_error(out.analytic, out.numeric);
  return out;
}

inline GradCheck exact_grad_check(const Model& model, std::span<const TokenId> src, std::span<const TokenId> gold,
                                  LossKind kind, double alpha, std::size_t max_len, const InfoTable* info = nullptr) {
  return exact_grad_check(model, src, gold, make_loss(kind, info), alpha, max_len);
}

struct EstimatorSpread {
  std::size_t k = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over seeds
  std::vector<double> values;
};

/// Sampled expected risk repeated over `seeds` independent generators.
inline EstimatorSpread risk_estimator_spread(const Model& model, std::span<const TokenId> src,
                                             std::span<const TokenId> gold, const LossFunction& loss, double alpha,
                                             std::size_t k, std::size_t max_len, std::size_t seeds,
                                             std::uint64_t base_seed) {
  EstimatorSpread out;
  out.k = k;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng = stream_rng(base_seed, k, s);
    const SampledSpace space = sample_space(model, src, gold, k, max_len, rng);
    const QDistribution q = q_distribution(space, alpha);
    out.values.push_back(expected_risk(space, q, candidate_losses(space, gold, loss)).expected_risk);
  }
  out.mean = std::accumulate(out.values.begin(), out.values.end(), 0.0) / static_cast<double>(seeds);
  double ss = 0.0;
  for (double v : out.values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = seeds > 1 ? std::sqrt(ss / static_cast<double>(seeds - 1)) : 0.0;
  return out;
}

struct FrequencyCheck {
  std::size_t sequences = 0;
  std::size_t within = 0;  // |freq - p| <= 3 standard errors
  double fraction() const { return sequences ? static_cast<double>(within) / static_cast<double>(sequences) : 0.0; }
  FrequencyCheck& operator+=(const FrequencyCheck& o) {
    sequences += o.sequences;
    within += o.within;
    return *this;
  }
};

/// Compares pre-dedup trajectory frequencies from `space` with exact probabilities.
inline FrequencyCheck sampling_frequency_check(const SampledSpace& space, const FullSpace& full) {
  std::vector<std::size_t> hits(space.size(), 0);
  for (std::size_t a : space.attempts) ++hits[a];
  std::map<TokenIds, std::size_t> counts;
  for (std::size_t i = 0; i < space.size(); ++i) counts[space.candidates[i]] = hits[i];
  const double k = static_cast<double>(space.attempts.size());
  FrequencyCheck out;
  for (std::size_t i = 0; i < full.size(); ++i) {
    const double p = full.probs[i];
    auto it = counts.find(full.sequences[i]);
    const double freq = it == counts.end() ? 0.0 : static_cast<double>(it->second) / k;
    const double se = std::sqrt(p * (1.0 - p) / k);
    ++out.sequences;
    if (std::abs(freq - p) <= 3.0 * se) ++out.within;
  }
  return out;
}

/// Small model for oracle runs: `content` target words, three source words,
/// every parameter uniform in [-scale, scale]. PAD, UNK and BOS get a large
/// negative output bias so sampled trajectories stay inside the enumerable
/// space.
inline Model oracle_model(std::size_t content, std::size_t max_len, std::uint64_t seed, double scale = 0.7,
                          std::size_t dim = 4) {
  ModelConfig c;
  c.src_vocab_size = kReservedTokens + 3;
  c.tgt_vocab_size = kReservedTokens + content;
  c.embed_dim = c.hidden_dim = c.attention_dim = dim;
  c.max_len = max_len;
  Model m = Model::create(c, seed);
  Rng rng = stream_rng(seed, 0x70f);
  std::uniform_real_distribution<double> uni(-scale, scale);
  for (std::size_t i = 0; i < m.params.size(); ++i) m.params.flat(i) = uni(rng);
  auto& bias = m.params.tensor(kOutB);
  for (TokenId r : {kPad, kUnk, kBos}) bias[static_cast<std::size_t>(r)] = -30.0;
  return m;
}

struct SampledVsExact {
  double exact = 0.0;           // risk under P renormalized over the full space
  double monte_carlo = 0.0;     // mean loss over the EOS-terminated draws
  std::size_t terminated_draws = 0;
  double subspace = 0.0;        // Q-weighted risk over the deduplicated sample
  double standard_error = 0.0;  // of the Monte Carlo mean, from the exact variance
  double terminated_mass = 0.0;
};

/// Exact risk at alpha = 1 against the plain Monte Carlo estimate from `k`
/// draws. Draws cut off at `max_len` fall outside the enumerated space and are
/// left out, so both sides condition on termination.
inline SampledVsExact sampled_vs_exact(const Model& model, std::span<const TokenId> src,
                                       std::span<const TokenId> gold, const LossFunction& loss, std::size_t k,
                                       std::size_t max_len, Rng& rng) {
  const FullSpace full = enumerate_space(model, src, max_len);
  SampledVsExact out;
  out.terminated_mass = full.terminated_mass;
  const std::vector<double> exact_losses = full_space_losses(full, gold, loss);
  out.exact = exact_risk(full, exact_losses, 1.0);
  double second = 0.0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    second += full.probs[i] / full.terminated_mass * std::pow(exact_losses[i] - out.exact, 2);
  }
  const SampledSpace space = sample_space(model, src, gold, k, max_len, rng);
  const std::vector<double> losses = candidate_losses(space, gold, loss);
  for (std::size_t a : space.attempts) {
    if (space.candidates[a].empty() || space.candidates[a].back() != kEos) continue;
    out.monte_carlo += losses[a];
    ++out.terminated_draws;
  }
  if (out.terminated_draws == 0) throw NumericError("sampled_vs_exact: no draw terminated within max_len");
  out.monte_carlo /= static_cast<double>(out.terminated_draws);
  out.standard_error = std::sqrt(second / static_cast<double>(out.terminated_draws));
  out.subspace = expected_risk(space, q_distribution(space, 1.0), losses).expected_risk;
  return out;
}

}  // namespace mrt
