#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrt/error.hpp"
#include "mrt/model.hpp"

namespace mrt {

/// Sentence-level losses; lower is better for every kind.
enum class LossKind { kNegSmoothedBleu, kSmoothedTer, kNegSmoothedNist };

inline std::string_view loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::kNegSmoothedBleu: return "sbleu";
    case LossKind::kSmoothedTer: return "ster";
    case LossKind::kNegSmoothedNist: return "snist";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "sbleu" || s == "-sbleu" || s == "neg-sbleu") return LossKind::kNegSmoothedBleu;
  if (s == "ster") return LossKind::kSmoothedTer;
  if (s == "snist" || s == "-snist" || s == "neg-snist") return LossKind::kNegSmoothedNist;
  throw DataError("unknown loss kind '" + std::string(s) + "' (expected sbleu, ster or snist)");
}

using Ngram = std::vector<TokenId>;
using NgramCounts = std::map<Ngram, std::size_t>;

inline constexpr std::size_t kMaxNgram = 4;

/// Counts of every n-gram with `lo <= n <= hi`.
inline NgramCounts ngram_counts(std::span<const TokenId> tokens, std::size_t lo = 1, std::size_t hi = kMaxNgram) {
  NgramCounts counts;
  for (std::size_t n = lo; n <= hi; ++n) {
    if (tokens.size() < n) break;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// BLEU

/// Clipped n-gram matches and totals for n = 1..4 plus lengths.
struct BleuStats {
  std::array<std::size_t, kMaxNgram> matches{};
  std::array<std::size_t, kMaxNgram> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (std::size_t n = 0; n < kMaxNgram; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
    return *this;
  }
};

/// Effective reference length: closest to `hyp_len`, ties resolved to the shorter.
inline std::size_t closest_ref_length(std::size_t hyp_len, std::span<const TokenIds> refs) {
  std::size_t best = 0;
  std::size_t best_diff = std::numeric_limits<std::size_t>::max();
  for (const auto& r : refs) {
    const std::size_t len = r.size();
    const std::size_t diff = len > hyp_len ? len - hyp_len : hyp_len - len;
    if (diff < best_diff || (diff == best_diff && len < best)) {
      best_diff = diff;
      best = len;
    }
  }
  return best;
}

/// Statistics against one or more references (counts clipped by the max
/// reference count). Inputs must already be content tokens.
inline BleuStats bleu_stats(std::span<const TokenId> hyp, std::span<const TokenIds> refs) {
  BleuStats s;
  s.hyp_len = hyp.size();
  s.ref_len = closest_ref_length(hyp.size(), refs);
  NgramCounts max_ref;
  for (const auto& r : refs) {
    for (const auto& [g, c] : ngram_counts(r)) max_ref[g] = std::max(max_ref[g], c);
  }
  for (const auto& [g, c] : ngram_counts(hyp)) {
    const std::size_t n = g.size() - 1;
    s.totals[n] += c;
    auto it = max_ref.find(g);
    if (it != max_ref.end()) s.matches[n] += std::min(c, it->second);
  }
  return s;
}

inline double brevity_penalty(double hyp_len, double ref_len) {
  if (hyp_len <= 0.0) return 0.0;
  return std::exp(std::min(0.0, 1.0 - ref_len / hyp_len));
}

/// Smoothed sentence BLEU in [0, 1]: unigram precision unsmoothed, add-one
/// on numerator and denominator for n >= 2. EOS/BOS/PAD are ignored.
inline double sentence_bleu_smoothed(std::span<const TokenId> hyp_in, std::span<const TokenId> ref_in) {
  const TokenIds hyp = content_tokens(hyp_in);
  const TokenIds ref = content_tokens(ref_in);
  if (hyp.empty()) return 0.0;
  const TokenIds refs[] = {ref};
  const BleuStats s = bleu_stats(hyp, refs);
  if (s.matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(s.matches[0]) / static_cast<double>(s.totals[0]));
  for (std::size_t n = 1; n < kMaxNgram; ++n) {
    log_sum += std::log((static_cast<double>(s.matches[n]) + 1.0) / (static_cast<double>(s.totals[n]) + 1.0));
  }
  return std::exp(log_sum / kMaxNgram) *
         brevity_penalty(static_cast<double>(hyp.size()), static_cast<double>(ref.size()));
}

/// BLEU from aggregated statistics without smoothing, in [0, 1]. Any zero
/// precision yields 0.
inline double bleu_from_stats(const BleuStats& s) {
  if (s.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < kMaxNgram; ++n) {
    if (s.matches[n] == 0 || s.totals[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
  }
  return std::exp(log_sum / kMaxNgram) *
         brevity_penalty(static_cast<double>(s.hyp_len), static_cast<double>(s.ref_len));
}

/// Corpus BLEU ×100 with multi-bleu semantics.
inline double corpus_bleu(std::span<const TokenIds> hyps, std::span<const std::vector<TokenIds>> refs) {
  if (hyps.size() != refs.size()) {
    throw DataError("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses but " +
                    std::to_string(refs.size()) + " reference sets");
  }
  BleuStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (refs[i].empty()) throw DataError("corpus_bleu: sentence " + std::to_string(i) + " has no reference");
    std::vector<TokenIds> r;
    r.reserve(refs[i].size());
    for (const auto& x : refs[i]) r.push_back(content_tokens(x));
    total += bleu_stats(content_tokens(hyps[i]), r);
  }
  return 100.0 * bleu_from_stats(total);
}

// ---------------------------------------------------------------------------
// TER

inline std::size_t levenshtein(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr std::size_t kMaxShiftLength = 10;

inline bool contains_span(std::span<const TokenId> haystack, std::span<const TokenId> needle) {
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

/// Shifts plus word edits after greedy block shifting.
///
/// Each round tries every block of the hypothesis (up to 10 words) that also
/// occurs verbatim in the reference, at every destination, and applies the
/// move with the smallest resulting edit distance if it lowers the total cost
/// (one per shift). Ties prefer the leftmost, then shortest block, then the
/// earliest destination.
inline std::size_t ter_edits(std::span<const TokenId> hyp_in, std::span<const TokenId> ref) {
  TokenIds cur(hyp_in.begin(), hyp_in.end());
  std::size_t edits = levenshtein(cur, ref);
  std::size_t shifts = 0;
  while (edits > 1) {
    std::size_t best = edits;
    std::size_t bi = 0, blen = 0, bp = 0;
    bool found = false;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      for (std::size_t len = 1; len <= kMaxShiftLength && i + len <= cur.size(); ++len) {
        const std::span<const TokenId> block(cur.data() + i, len);
        if (!contains_span(ref, block)) break;
        TokenIds rest;
        rest.reserve(cur.size());
        rest.insert(rest.end(), cur.begin(), cur.begin() + static_cast<std::ptrdiff_t>(i));
        rest.insert(rest.end(), cur.begin() + static_cast<std::ptrdiff_t>(i + len), cur.end());
        for (std::size_t p = 0; p <= rest.size(); ++p) {
          if (p == i) continue;
          TokenIds moved;
          moved.reserve(cur.size());
          moved.insert(moved.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(p));
          moved.insert(moved.end(), block.begin(), block.end());
          moved.insert(moved.end(), rest.begin() + static_cast<std::ptrdiff_t>(p), rest.end());
          const std::size_t d = levenshtein(moved, ref);
          if (d < best) {
            best = d;
            bi = i;
            blen = len;
            bp = p;
            found = true;
          }
        }
      }
    }
    if (!found || best + 1 >= edits) break;
    TokenIds rest;
    rest.insert(rest.end(), cur.begin(), cur.begin() + static_cast<std::ptrdiff_t>(bi));
    rest.insert(rest.end(), cur.begin() + static_cast<std::ptrdiff_t>(bi + blen), cur.end());
    TokenIds moved(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(bp));
    moved.insert(moved.end(), cur.begin() + static_cast<std::ptrdiff_t>(bi),
                 cur.begin() + static_cast<std::ptrdiff_t>(bi + blen));
    moved.insert(moved.end(), rest.begin() + static_cast<std::ptrdiff_t>(bp), rest.end());
    cur = std::move(moved);
    edits = best;
    ++shifts;
  }
  return shifts + edits;
}

/// Translation edit rate: edits / |ref|.
inline double sentence_ter(std::span<const TokenId> hyp_in, std::span<const TokenId> ref_in) {
  const TokenIds hyp = content_tokens(hyp_in);
  const TokenIds ref = content_tokens(ref_in);
  if (ref.empty()) throw DataError("sentence_ter: empty reference");
  return static_cast<double>(ter_edits(hyp, ref)) / static_cast<double>(ref.size());
}

/// Corpus TER ×100: per sentence the fewest edits over its references,
/// normalized by the summed average reference length.
inline double corpus_ter(std::span<const TokenIds> hyps, std::span<const std::vector<TokenIds>> refs) {
  if (hyps.size() != refs.size()) throw DataError("corpus_ter: hypothesis/reference count mismatch");
  double edits = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (refs[i].empty()) throw DataError("corpus_ter: sentence " + std::to_string(i) + " has no reference");
    const TokenIds hyp = content_tokens(hyps[i]);
    std::size_t best = std::numeric_limits<std::size_t>::max();
    double len = 0.0;
    for (const auto& r : refs[i]) {
      const TokenIds ref = content_tokens(r);
      best = std::min(best, ter_edits(hyp, ref));
      len += static_cast<double>(ref.size());
    }
    edits += static_cast<double>(best);
    ref_len += len / static_cast<double>(refs[i].size());
  }
  if (ref_len == 0.0) throw DataError("corpus_ter: references are empty");
  return 100.0 * edits / ref_len;
}

// ---------------------------------------------------------------------------
// NIST

/// Information weight (bits) per n-gram observed in a reference corpus.
class InfoTable {
 public:
  InfoTable() = default;
  explicit InfoTable(std::map<Ngram, double> weights) : weights_(std::move(weights)) {}

  std::optional<double> info(const Ngram& g) const {
    auto it = weights_.find(g);
    if (it == weights_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t size() const noexcept { return weights_.size(); }
  const std::map<Ngram, double>& weights() const noexcept { return weights_; }

 private:
  std::map<Ngram, double> weights_;
};

/// Info(w1..wn) = log2(count(w1..wn-1) / count(w1..wn)); count of the empty
/// prefix is the corpus token count.
inline InfoTable build_info_table(std::span<const TokenIds> corpus) {
  if (corpus.empty()) throw DataError("build_info_table: empty corpus");
  NgramCounts counts;
  std::size_t tokens = 0;
  for (const auto& s : corpus) {
    const TokenIds c = content_tokens(s);
    tokens += c.size();
    for (const auto& [g, n] : ngram_counts(c)) counts[g] += n;
  }
  std::map<Ngram, double> weights;
  for (const auto& [g, n] : counts) {
    const double prefix = g.size() == 1 ? static_cast<double>(tokens)
                                        : static_cast<double>(counts.at(Ngram(g.begin(), g.end() - 1)));
    weights.emplace(g, std::log2(prefix / static_cast<double>(n)));
  }
  return InfoTable(std::move(weights));
}

/// exp(beta * log^2(min(1, ratio))) with beta chosen so the factor is 0.5 at ratio 2/3.
inline double nist_brevity_factor(double ratio) {
  static const double beta = std::log(0.5) / std::pow(std::log(2.0 / 3.0), 2);
  if (ratio >= 1.0) return 1.0;
  if (ratio <= 0.0) return 0.0;
  return std::exp(beta * std::pow(std::log(ratio), 2));
}

struct NistStats {
  std::array<double, kMaxNgram> info{};
  std::array<std::size_t, kMaxNgram> totals{};
  double hyp_len = 0.0;
  double ref_len = 0.0;
};

inline NistStats nist_stats(std::span<const TokenId> hyp, std::span<const TokenIds> refs, const InfoTable& table) {
  NistStats s;
  s.hyp_len = static_cast<double>(hyp.size());
  double ref_total = 0.0;
  NgramCounts max_ref;
  for (const auto& r : refs) {
    ref_total += static_cast<double>(r.size());
    for (const auto& [g, c] : ngram_counts(r)) max_ref[g] = std::max(max_ref[g], c);
  }
  s.ref_len = refs.empty() ? 0.0 : ref_total / static_cast<double>(refs.size());
  for (const auto& [g, c] : ngram_counts(hyp)) {
    const std::size_t n = g.size() - 1;
    s.totals[n] += c;
    auto it = max_ref.find(g);
    if (it == max_ref.end()) continue;
    if (const auto w = table.info(g)) s.info[n] += static_cast<double>(std::min(c, it->second)) * *w;
  }
  return s;
}

inline double nist_from_stats(const NistStats& s) {
  if (s.hyp_len == 0.0) return 0.0;
  double score = 0.0;
  for (std::size_t n = 0; n < kMaxNgram; ++n) score += s.info[n] / std::max<double>(1.0, static_cast<double>(s.totals[n]));
  return score * nist_brevity_factor(s.ref_len > 0.0 ? s.hyp_len / s.ref_len : 1.0);
}

/// Sentence-level NIST: information-weighted matches over n = 1..4 with the NIST brevity factor.
inline double sentence_nist(std::span<const TokenId> hyp_in, std::span<const TokenId> ref_in, const InfoTable& table) {
  const TokenIds hyp = content_tokens(hyp_in);
  if (hyp.empty()) return 0.0;
  const TokenIds refs[] = {content_tokens(ref_in)};
  return nist_from_stats(nist_stats(hyp, refs, table));
}

inline double corpus_nist(std::span<const TokenIds> hyps, std::span<const std::vector<TokenIds>> refs,
                          const InfoTable& table) {
  if (hyps.size() != refs.size()) throw DataError("corpus_nist: hypothesis/reference count mismatch");
  NistStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    std::vector<TokenIds> r;
    for (const auto& x : refs[i]) r.push_back(content_tokens(x));
    const NistStats s = nist_stats(content_tokens(hyps[i]), r, table);
    for (std::size_t n = 0; n < kMaxNgram; ++n) {
      total.info[n] += s.info[n];
      total.totals[n] += s.totals[n];
    }
    total.hyp_len += s.hyp_len;
    total.ref_len += s.ref_len;
  }
  return nist_from_stats(total);
}

// ---------------------------------------------------------------------------
// Loss functions

/// Δ(hyp, ref); lower means a better candidate.
using LossFunction = std::function<double(std::span<const TokenId> hyp, std::span<const TokenId> ref)>;

inline double delta(LossKind kind, std::span<const TokenId> hyp, std::span<const TokenId> ref,
                    const InfoTable* info = nullptr) {
  switch (kind) {
    case LossKind::kNegSmoothedBleu: return -sentence_bleu_smoothed(hyp, ref);
    case LossKind::kSmoothedTer: return sentence_ter(hyp, ref);
    case LossKind::kNegSmoothedNist:
      if (info == nullptr) throw DataError("delta: NIST loss needs an information table");
      return -sentence_nist(hyp, ref, *info);
  }
  throw DataError("delta: unknown loss kind");
}

/// Binds a loss kind (and its table, for NIST) into a LossFunction. The
/// table must outlive the returned function.
inline LossFunction make_loss(LossKind kind, const InfoTable* info = nullptr) {
  if (kind == LossKind::kNegSmoothedNist && info == nullptr) {
    throw DataError("make_loss: NIST loss needs an information table");
  }
  return [kind, info](std::span<const TokenId> hyp, std::span<const TokenId> ref) {
    return delta(kind, hyp, ref, info);
  };
}

}  // namespace mrt
