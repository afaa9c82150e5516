#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include "mrt/error.hpp"
#include "mrt/model.hpp"
#include "mrt/tape.hpp"

namespace mrt {

inline constexpr std::size_t kDefaultBeamWidth = 10;

struct BeamResult {
  TokenIds tokens;
  double logprob = 0.0;  // raw accumulated log P
};

namespace detail {

// PAD and BOS are never produced by the decoders.
inline bool decodable(std::size_t id) {
  return id != static_cast<std::size_t>(kPad) && id != static_cast<std::size_t>(kBos);
}

inline double final_score(const BeamResult& r, bool normalize) {
  return normalize ? r.logprob / static_cast<double>(r.tokens.size()) : r.logprob;
}

// better score wins; ties go to the lexicographically smaller sequence
inline bool better(const BeamResult& a, const BeamResult& b, bool normalize) {
  const double sa = final_score(a, normalize), sb = final_score(b, normalize);
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace detail

/// Argmax decoding; ties go to the smaller token id. Stops at EOS or after
/// `max_len` tokens.
inline BeamResult greedy_decode(const Model& model, std::span<const TokenId> src, std::size_t max_len) {
  if (max_len == 0) throw DataError("greedy_decode: max_len must be at least 1");
  Tape tape;
  const Annotations ann = encode(model, src, tape);
  StepState state = initial_state(model, ann, tape);
  TokenId prev = kBos;
  BeamResult out;
  for (std::size_t n = 0; n < max_len; ++n) {
    const StepOutput step = decode_step(model, prev, state, ann, tape);
    const auto lp = tape.value(step.log_probs).values();
    std::size_t best = lp.size();
    for (std::size_t t = 0; t < lp.size(); ++t) {
      if (detail::decodable(t) && (best == lp.size() || lp[t] > lp[best])) best = t;
    }
    out.logprob += lp[best];
    out.tokens.push_back(static_cast<TokenId>(best));
    if (best == static_cast<std::size_t>(kEos)) break;
    state = step.next;
    prev = static_cast<TokenId>(best);
  }
  return out;
}

struct BeamOptions {
  std::size_t width = kDefaultBeamWidth;
  std::size_t max_len = 20;
  bool length_normalize = true;
};

/// Beam search. Each step expands every live hypothesis over the vocabulary
/// and keeps the best `width` expansions; those ending in EOS retire to the
/// completed pool. If nothing completes within `max_len`, the best live
/// hypothesis is returned unterminated.
inline BeamResult beam_decode(const Model& model, std::span<const TokenId> src, const BeamOptions& opt) {
  if (opt.width == 0) throw DataError("beam_decode: width must be at least 1");
  if (opt.max_len == 0) throw DataError("beam_decode: max_len must be at least 1");
  struct Live {
    BeamResult hyp;
    StepState state;
  };
  struct Expansion {
    double score;
    std::size_t parent;
    std::size_t token;
  };
  Tape tape;
  const Annotations ann = encode(model, src, tape);
  std::vector<Live> live{{BeamResult{}, initial_state(model, ann, tape)}};
  std::vector<BeamResult> completed;
  std::vector<StepOutput> steps;
  std::vector<Expansion> cand;

  for (std::size_t n = 0; n < opt.max_len && !live.empty(); ++n) {
    steps.clear();
    cand.clear();
    for (std::size_t i = 0; i < live.size(); ++i) {
      const TokenId prev = live[i].hyp.tokens.empty() ? kBos : live[i].hyp.tokens.back();
      steps.push_back(decode_step(model, prev, live[i].state, ann, tape));
      const auto lp = tape.value(steps.back().log_probs).values();
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (detail::decodable(t)) cand.push_back({live[i].hyp.logprob + lp[t], i, t});
      }
    }
    const std::size_t keep = std::min(opt.width, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                      [](const Expansion& a, const Expansion& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Live> next;
    for (std::size_t j = 0; j < keep; ++j) {
      const Expansion& e = cand[j];
      BeamResult h = live[e.parent].hyp;
      h.tokens.push_back(static_cast<TokenId>(e.token));
      h.logprob = e.score;
      if (e.token == static_cast<std::size_t>(kEos)) {
        completed.push_back(std::move(h));
      } else {
        next.push_back({std::move(h), steps[e.parent].next});
      }
    }
    live = std::move(next);

    if (!completed.empty() && !live.empty()) {
      double best_done = -INFINITY;
      for (const auto& c : completed) best_done = std::max(best_done, detail::final_score(c, opt.length_normalize));
      // log-probs only fall as hypotheses grow; with normalization the most
      // a live score can reach is s / max_len
      double best_live = -INFINITY;
      for (const auto& l : live) {
        const double s = l.hyp.logprob;
        best_live = std::max(best_live, opt.length_normalize ? s / static_cast<double>(opt.max_len) : s);
      }
      if (best_live < best_done) live.clear();
    }
  }

  const std::vector<BeamResult>* pool = &completed;
  std::vector<BeamResult> unfinished;
  if (completed.empty()) {
    for (auto& l : live) unfinished.push_back(std::move(l.hyp));
    pool = &unfinished;
  }
  const BeamResult* best = nullptr;
  for (const auto& r : *pool) {
    if (!best || detail::better(r, *best, opt.length_normalize)) best = &r;
  }
  return best ? *best : BeamResult{};
}

inline BeamResult beam_decode(const Model& model, std::span<const TokenId> src, std::size_t width,
                              std::size_t max_len) {
  return beam_decode(model, src, BeamOptions{width, max_len, true});
}

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads. Rethrows the
/// first failure.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> cursor{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = cursor++; i < n; i = cursor++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Decodes every source sentence; output order follows input order.
inline std::vector<TokenIds> decode_corpus(const Model& model, std::span<const TokenIds> sources,
                                           const BeamOptions& opt, std::size_t workers = 1) {
  std::vector<TokenIds> out(sources.size());
  parallel_for(sources.size(), workers, [&](std::size_t i) {
    out[i] = opt.width == 1 ? greedy_decode(model, sources[i], opt.max_len).tokens
                            : beam_decode(model, sources[i], opt).tokens;
  });
  return out;
}

}  // namespace mrt
