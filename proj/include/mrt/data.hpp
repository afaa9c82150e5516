#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mrt/error.hpp"
#include "mrt/model.hpp"
#include "mrt/random.hpp"

namespace mrt {

inline constexpr std::string_view kReservedNames[kReservedTokens] = {"<pad>", "<eos>", "<unk>", "<bos>"};

inline std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string ascii_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

class Vocab {
 public:
  Vocab() {
    for (auto name : kReservedNames) push(std::string(name));
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  bool lowercase() const noexcept { return lowercase_; }
  void set_lowercase(bool v) { lowercase_ = v; }

  TokenId add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    return push(token);
  }

  TokenId id(const std::string& token) const {
    auto it = ids_.find(lowercase_ ? ascii_lower(token) : token);
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  TokenIds encode(std::string_view line) const {
    TokenIds out;
    for (const auto& w : split_words(line)) out.push_back(id(w));
    return out;
  }

  /// Space-joined words; stops at EOS and drops PAD/BOS.
  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId t : ids) {
      if (t == kEos) break;
      if (t == kPad || t == kBos) continue;
      if (!out.empty()) out += ' ';
      out += token(t);
    }
    return out;
  }

  void save(const std::filesystem::path& path) const { write_lines(path, tokens_); }

  static Vocab load(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    if (lines.size() < kReservedTokens) throw DataError(path.string() + ": vocabulary shorter than reserved header");
    Vocab v;
    for (std::size_t i = 0; i < kReservedTokens; ++i) {
      if (lines[i] != kReservedNames[i]) {
        throw DataError(path.string() + ": line " + std::to_string(i + 1) + " should be " +
                        std::string(kReservedNames[i]));
      }
    }
    for (std::size_t i = kReservedTokens; i < lines.size(); ++i) {
      if (lines[i].empty() || v.ids_.count(lines[i])) {
        throw DataError(path.string() + ": bad or duplicate token on line " + std::to_string(i + 1));
      }
      v.push(lines[i]);
    }
    return v;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  TokenId push(const std::string& token) {
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  bool lowercase_ = false;
};

/// Reserved ids followed by the `max_size` most frequent words; frequency
/// ties break lexicographically.
inline Vocab build_vocab(const std::vector<std::string>& lines, std::size_t max_size, bool lowercase = false) {
  if (max_size < kReservedTokens) {
    throw DataError("vocabulary size " + std::to_string(max_size) + " is below the " +
                    std::to_string(kReservedTokens) + " reserved ids");
  }
  std::map<std::string, std::size_t> freq;
  for (const auto& line : lines) {
    for (auto& w : split_words(line)) ++freq[lowercase ? ascii_lower(w) : w];
  }
  if (freq.empty()) throw DataError("build_vocab: empty corpus");
  std::vector<std::pair<std::string, std::size_t>> order(freq.begin(), freq.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  v.set_lowercase(lowercase);
  for (const auto& [w, n] : order) {
    if (v.size() >= max_size + kReservedTokens) break;
    if (std::find(std::begin(kReservedNames), std::end(kReservedNames), w) != std::end(kReservedNames)) continue;
    v.add(w);
  }
  return v;
}

inline Vocab build_vocab_from_files(const std::vector<std::filesystem::path>& files, std::size_t max_size,
                                    bool lowercase = false) {
  std::vector<std::string> lines;
  for (const auto& f : files) {
    auto more = read_lines(f);
    lines.insert(lines.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  return build_vocab(lines, max_size, lowercase);
}

struct Corpus {
  std::string name;
  std::vector<SentencePair> pairs;                 // targets end with EOS
  std::vector<std::vector<TokenIds>> references;   // per sentence, without EOS
  std::size_t filtered = 0;                        // pairs dropped for length

  std::size_t size() const noexcept { return pairs.size(); }
  std::vector<TokenIds> sources() const {
    std::vector<TokenIds> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(p.src);
    return out;
  }
};

/// Aligned source/target lines; each target gets EOS appended. Pairs with
/// more than `max_len` words on either side are dropped and counted.
inline Corpus parallel_from_lines(const std::vector<std::string>& src_lines, const std::vector<std::string>& tgt_lines,
                                  const Vocab& src_vocab, const Vocab& tgt_vocab, std::size_t max_len,
                                  std::string name = "corpus") {
  if (src_lines.size() != tgt_lines.size()) {
    throw DataError(name + ": source has " + std::to_string(src_lines.size()) + " lines but target has " +
                    std::to_string(tgt_lines.size()));
  }
  Corpus c;
  c.name = std::move(name);
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    TokenIds src = src_vocab.encode(src_lines[i]);
    TokenIds tgt = tgt_vocab.encode(tgt_lines[i]);
    if (src.empty() || tgt.empty()) throw DataError(c.name + ": empty sentence on line " + std::to_string(i + 1));
    if (src.size() > max_len || tgt.size() > max_len) {
      ++c.filtered;
      continue;
    }
    c.references.push_back({tgt});
    tgt.push_back(kEos);
    c.pairs.push_back({std::move(src), std::move(tgt)});
  }
  return c;
}

inline Corpus load_parallel(const std::filesystem::path& src_file, const std::filesystem::path& tgt_file,
                            const Vocab& src_vocab, const Vocab& tgt_vocab, std::size_t max_len) {
  return parallel_from_lines(read_lines(src_file), read_lines(tgt_file), src_vocab, tgt_vocab, max_len,
                             src_file.stem().string());
}

/// Replaces the single-reference sets with the given reference files, which
/// must align with the corpus lines as loaded (no length filtering applied).
inline void attach_references(Corpus& corpus, const std::vector<std::filesystem::path>& files, const Vocab& vocab) {
  if (files.empty()) return;
  if (corpus.filtered != 0) throw DataError(corpus.name + ": cannot align references after length filtering");
  std::vector<std::vector<TokenIds>> refs(corpus.size());
  for (const auto& f : files) {
    const auto lines = read_lines(f);
    if (lines.size() != corpus.size()) {
      throw DataError(f.string() + " has " + std::to_string(lines.size()) + " lines, corpus has " +
                      std::to_string(corpus.size()));
    }
    for (std::size_t i = 0; i < lines.size(); ++i) refs[i].push_back(vocab.encode(lines[i]));
  }
  corpus.references = std::move(refs);
}

struct Batch {
  std::vector<TokenIds> src;  // trailing PAD to the longest row
  std::vector<TokenIds> tgt;
  std::vector<std::size_t> src_lengths;
  std::vector<std::size_t> tgt_lengths;

  std::size_t size() const noexcept { return src.size(); }
};

inline Batch make_batch(std::span<const SentencePair> pairs) {
  Batch b;
  std::size_t ms = 0, mt = 0;
  for (const auto& p : pairs) {
    ms = std::max(ms, p.src.size());
    mt = std::max(mt, p.tgt.size());
  }
  for (const auto& p : pairs) {
    b.src_lengths.push_back(p.src.size());
    b.tgt_lengths.push_back(p.tgt.size());
    b.src.push_back(p.src);
    b.src.back().resize(ms, kPad);
    b.tgt.push_back(p.tgt);
    b.tgt.back().resize(mt, kPad);
  }
  return b;
}

inline std::vector<SentencePair> unbatch(const Batch& b) {
  std::vector<SentencePair> out;
  for (std::size_t i = 0; i < b.size(); ++i) {
    out.push_back({TokenIds(b.src[i].begin(), b.src[i].begin() + static_cast<std::ptrdiff_t>(b.src_lengths[i])),
                   TokenIds(b.tgt[i].begin(), b.tgt[i].begin() + static_cast<std::ptrdiff_t>(b.tgt_lengths[i]))});
  }
  return out;
}

// ---- synthetic tasks ----

enum class SyntheticTask { kCopy, kReverse, kLexicon };

inline SyntheticTask parse_task(std::string_view s) {
  if (s == "copy") return SyntheticTask::kCopy;
  if (s == "reverse") return SyntheticTask::kReverse;
  if (s == "lexicon") return SyntheticTask::kLexicon;
  throw DataError("unknown synthetic task '" + std::string(s) + "' (copy, reverse, lexicon)");
}

inline const char* task_name(SyntheticTask t) {
  switch (t) {
    case SyntheticTask::kCopy: return "copy";
    case SyntheticTask::kReverse: return "reverse";
    case SyntheticTask::kLexicon: return "lexicon";
  }
  return "?";
}

struct SyntheticOptions {
  SyntheticTask task = SyntheticTask::kLexicon;
  std::size_t vocab_size = 20;  // content word types per side
  std::size_t n_train = 2000;
  std::size_t n_valid = 200;
  std::size_t n_test = 200;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
  std::uint64_t seed = 1;
};

struct TextSplit {
  std::vector<std::string> src;
  std::vector<std::string> tgt;
};

struct SyntheticData {
  TextSplit train, valid, test;
  std::size_t references = 4;  // identical copies for valid/test
};

inline std::string src_word(std::size_t i) { return "s" + std::to_string(i); }
inline std::string tgt_word(SyntheticTask task, std::size_t i) {
  return task == SyntheticTask::kLexicon ? "t" + std::to_string(i) : src_word(i);
}

/// Lexicon rule on word indices: substitute through `perm`, then swap each
/// adjacent pair starting at an index divisible by 3.
inline std::vector<std::size_t> lexicon_transform(std::span<const std::size_t> src,
                                                  std::span<const std::size_t> perm) {
  std::vector<std::size_t> out;
  out.reserve(src.size());
  for (std::size_t w : src) out.push_back(perm[w]);
  for (std::size_t i = 0; i + 1 < out.size(); i += 3) std::swap(out[i], out[i + 1]);
  return out;
}

inline std::vector<std::size_t> synthetic_lexicon(std::size_t vocab_size, std::uint64_t seed) {
  std::vector<std::size_t> perm(vocab_size);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = stream_rng(seed, 0x1e81c0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

inline SyntheticData gen_synthetic(const SyntheticOptions& o) {
  if (o.vocab_size < 5) throw DataError("gen_synthetic: vocab_size must be at least 5");
  if (o.min_len < 1 || o.max_len < o.min_len) throw DataError("gen_synthetic: bad length range");
  const auto perm = synthetic_lexicon(o.vocab_size, o.seed);
  Rng rng = stream_rng(o.seed, 0x5e9);
  std::uniform_int_distribution<std::size_t> len(o.min_len, o.max_len), word(0, o.vocab_size - 1);
  const std::size_t total = o.n_train + o.n_valid + o.n_test;
  std::set<std::vector<std::size_t>> seen;
  std::vector<std::vector<std::size_t>> sources;
  for (std::size_t attempts = 0; sources.size() < total; ++attempts) {
    if (attempts > 50 * total + 1000) throw DataError("gen_synthetic: not enough distinct sentences for the splits");
    std::vector<std::size_t> s(len(rng));
    for (auto& w : s) w = word(rng);
    if (seen.insert(s).second) sources.push_back(std::move(s));
  }
  auto render = [&](const std::vector<std::size_t>& s, TextSplit& split) {
    std::vector<std::size_t> t;
    switch (o.task) {
      case SyntheticTask::kCopy: t = s; break;
      case SyntheticTask::kReverse: t.assign(s.rbegin(), s.rend()); break;
      case SyntheticTask::kLexicon: t = lexicon_transform(s, perm); break;
    }
    std::string a, b;
    for (std::size_t w : s) a += (a.empty() ? "" : " ") + src_word(w);
    for (std::size_t w : t) b += (b.empty() ? "" : " ") + tgt_word(o.task, w);
    split.src.push_back(std::move(a));
    split.tgt.push_back(std::move(b));
  };
  SyntheticData d;
  for (std::size_t i = 0; i < total; ++i) {
    render(sources[i], i < o.n_train ? d.train : i < o.n_train + o.n_valid ? d.valid : d.test);
  }
  return d;
}

/// {prefix}.src, {prefix}.tgt and, for held-out splits, {prefix}.ref.{0..3}.
inline void write_synthetic(const std::filesystem::path& dir, const SyntheticData& d) {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::string& name, const TextSplit& s, bool refs) {
    write_lines(dir / (name + ".src"), s.src);
    write_lines(dir / (name + ".tgt"), s.tgt);
    if (refs) {
      for (std::size_t r = 0; r < d.references; ++r) write_lines(dir / (name + ".ref." + std::to_string(r)), s.tgt);
    }
  };
  put("train", d.train, false);
  put("valid", d.valid, true);
  put("test", d.test, true);
}

inline std::vector<std::filesystem::path> reference_files(const std::filesystem::path& dir, const std::string& split) {
  std::vector<std::filesystem::path> out;
  for (std::size_t r = 0;; ++r) {
    auto p = dir / (split + ".ref." + std::to_string(r));
    if (!std::filesystem::exists(p)) break;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace mrt
