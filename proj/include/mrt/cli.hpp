#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mrt/data.hpp"
#include "mrt/decoder.hpp"
#include "mrt/error.hpp"
#include "mrt/metrics.hpp"
#include "mrt/minimum_risk.hpp"
#include "mrt/model.hpp"
#include "mrt/oracle.hpp"
#include "mrt/trainer.hpp"

namespace mrt::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v + 0.0);  // no "-0.00"
  return buf;
}

/// Reference list for `evaluate`: each path is used as is if it exists,
/// otherwise as a prefix for path.0, path.1, ...
inline std::vector<fs::path> expand_references(const std::vector<std::string>& given) {
  std::vector<fs::path> out;
  for (const auto& g : given) {
    if (fs::exists(g)) {
      out.emplace_back(g);
      continue;
    }
    std::size_t before = out.size();
    for (std::size_t i = 0; fs::exists(g + "." + std::to_string(i)); ++i) out.emplace_back(g + "." + std::to_string(i));
    if (out.size() == before) throw DataError("no reference file '" + g + "' (nor " + g + ".0, ...)");
  }
  return out;
}

/// Text-level corpus scores; words get ids on first sight.
inline Scores score_text(const std::vector<std::string>& hyps, const std::vector<std::vector<std::string>>& ref_sets) {
  std::unordered_map<std::string, TokenId> ids;
  auto encode = [&](const std::string& line) {
    TokenIds out;
    for (const auto& w : split_words(line)) {
      auto [it, _] = ids.try_emplace(w, static_cast<TokenId>(kReservedTokens + ids.size()));
      out.push_back(it->second);
    }
    return out;
  };
  std::vector<TokenIds> h;
  std::vector<std::vector<TokenIds>> r(hyps.size());
  for (const auto& line : hyps) h.push_back(encode(line));
  for (const auto& set : ref_sets) {
    if (set.size() != hyps.size()) {
      throw DataError("reference has " + std::to_string(set.size()) + " lines, hypothesis has " +
                      std::to_string(hyps.size()));
    }
    for (std::size_t i = 0; i < set.size(); ++i) r[i].push_back(encode(set[i]));
  }
  if (hyps.empty()) throw DataError("evaluate: empty hypothesis file");
  return score_corpus(h, r);
}

// ---- run configuration ----

/// Model and training settings as one flat JSON document.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

inline const std::vector<std::string>& model_config_keys() {
  static const std::vector<std::string> keys{"embed_dim", "hidden_dim", "attention_dim", "max_len"};
  return keys;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = c.train;
  const nlohmann::json m = c.model;
  for (const auto& k : model_config_keys()) j[k] = m[k];
  return j;
}

inline void apply_run_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw DataError("config: expected a JSON object");
  const auto& tk = train_config_keys();
  const auto& mk = model_config_keys();
  nlohmann::json train_part = nlohmann::json::object();
  for (const auto& [key, value] : j.items()) {
    if (std::find(mk.begin(), mk.end(), key) != mk.end()) {
      try {
        std::size_t v = value.get<std::size_t>();
        if (key == "embed_dim") c.model.embed_dim = v;
        if (key == "hidden_dim") c.model.hidden_dim = v;
        if (key == "attention_dim") c.model.attention_dim = v;
        if (key == "max_len") c.model.max_len = v;
      } catch (const nlohmann::json::exception& e) {
        throw DataError("config: " + key + ": " + e.what());
      }
    } else if (std::find(tk.begin(), tk.end(), key) != tk.end()) {
      train_part[key] = value;
    } else {
      throw DataError("config: unknown key '" + key + "'");
    }
  }
  apply_json(train_part, c.train);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("config: " + path + ": " + e.what());
  }
  RunConfig c;
  apply_run_json(j, c);
  return c;
}

// ---- dispatcher ----

struct Globals {
  std::string config;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  bool quiet = false;
};

/// Paths shared by the training-style subcommands.
struct DataFlags {
  std::string dir;
  std::string train_src, train_tgt, valid_src, valid_tgt, src_vocab, tgt_vocab;
  std::vector<std::string> valid_refs;

  void add_to(CLI::App* app) {
    app->add_option("--data", dir, "directory written by gen-synthetic (plus src.vocab/tgt.vocab)");
    app->add_option("--train-src", train_src);
    app->add_option("--train-tgt", train_tgt);
    app->add_option("--valid-src", valid_src);
    app->add_option("--valid-tgt", valid_tgt);
    app->add_option("--valid-ref", valid_refs, "validation references, replacing the target side (file or prefix of .0, .1, ...)");
    app->add_option("--src-vocab", src_vocab);
    app->add_option("--tgt-vocab", tgt_vocab);
  }

  void resolve() {
    auto fill = [&](std::string& v, const char* name, const char* flag) {
      if (!v.empty()) return;
      if (dir.empty()) throw CLI::RequiredError(flag);
      v = (fs::path(dir) / name).string();
    };
    fill(train_src, "train.src", "--train-src");
    fill(train_tgt, "train.tgt", "--train-tgt");
    fill(valid_src, "valid.src", "--valid-src");
    fill(valid_tgt, "valid.tgt", "--valid-tgt");
    fill(src_vocab, "src.vocab", "--src-vocab");
    fill(tgt_vocab, "tgt.vocab", "--tgt-vocab");
    if (valid_refs.empty() && !dir.empty()) {
      for (const auto& p : reference_files(dir, "valid")) valid_refs.push_back(p.string());
    }
  }
};

struct LoadedData {
  Vocab src, tgt;
  Corpus train, valid;
};

inline LoadedData load_data(const DataFlags& d, std::size_t max_len) {
  LoadedData out;
  out.src = Vocab::load(d.src_vocab);
  out.tgt = Vocab::load(d.tgt_vocab);
  out.train = load_parallel(d.train_src, d.train_tgt, out.src, out.tgt, max_len);
  out.valid = load_parallel(d.valid_src, d.valid_tgt, out.src, out.tgt, std::numeric_limits<std::size_t>::max());
  out.valid.name = "valid";
  if (!d.valid_refs.empty()) {
    std::vector<fs::path> refs;
    for (const auto& r : expand_references(d.valid_refs)) refs.push_back(r);
    attach_references(out.valid, refs, out.tgt);
  }
  return out;
}

/// Training flags; each one overrides the config file only when given.
struct TrainFlags {
  CLI::App* app = nullptr;
  std::string criterion, optimizer, loss, init;
  std::size_t batch_size = 0, max_updates = 0, eval_every = 0, k = 0, beam = 0;
  std::size_t embed_dim = 0, hidden_dim = 0, attention_dim = 0, max_len = 0;
  double lr = 0, clip = 0, alpha = 0, stop_at_bleu = 0;
  bool allow_random_init = false;

  void add_to(CLI::App* a, bool sweep) {
    app = a;
    if (!sweep) {
      a->add_option("--criterion", criterion, "mle or mrt");
      a->add_option("--alpha", alpha, "Q sharpness");
      a->add_option("--k", k, "samples per sentence");
    }
    a->add_option("--optimizer", optimizer, "sgd or adam");
    a->add_option("--loss", loss, "sbleu, ster or snist");
    a->add_option("--init", init, "initial checkpoint");
    a->add_flag("--allow-random-init", allow_random_init);
    a->add_option("--batch-size", batch_size);
    a->add_option("--lr", lr);
    a->add_option("--clip", clip, "global gradient norm bound");
    a->add_option("--max-updates", max_updates);
    a->add_option("--eval-every", eval_every);
    a->add_option("--beam", beam, "validation beam width");
    a->add_option("--stop-at-bleu", stop_at_bleu);
    a->add_option("--embed-dim", embed_dim);
    a->add_option("--hidden-dim", hidden_dim);
    a->add_option("--attention-dim", attention_dim);
    a->add_option("--max-len", max_len, "longest target in words");
  }

  bool given(const char* name) const {
    const CLI::Option* o = app->get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
  }

  RunConfig resolve(const Globals& g) const {
    RunConfig c;
    if (!g.config.empty()) c = load_run_config(g.config);
    TrainConfig& t = c.train;
    if (given("--criterion")) t.criterion = parse_criterion(criterion);
    if (given("--optimizer")) t.optimizer = parse_optimizer(optimizer);
    if (given("--loss")) t.loss_kind = parse_loss_kind(loss);
    if (given("--init")) t.init_checkpoint = init;
    if (given("--allow-random-init")) t.allow_random_init = allow_random_init;
    if (given("--batch-size")) t.batch_size = batch_size;
    if (given("--lr")) t.learning_rate = lr;
    if (given("--clip")) t.grad_clip_norm = clip;
    if (given("--max-updates")) t.max_updates = max_updates;
    if (given("--eval-every")) t.eval_every = eval_every;
    if (given("--alpha")) t.alpha = alpha;
    if (given("--k")) t.k = k;
    if (given("--beam")) t.beam = beam;
    if (given("--stop-at-bleu")) t.stop_at_bleu = stop_at_bleu;
    if (given("--embed-dim")) c.model.embed_dim = embed_dim;
    if (given("--hidden-dim")) c.model.hidden_dim = hidden_dim;
    if (given("--attention-dim")) c.model.attention_dim = attention_dim;
    if (given("--max-len")) c.model.max_len = max_len;
    const CLI::App* root = app->get_parent();
    if (root->get_option("--seed")->count() > 0 || g.config.empty()) t.seed = g.seed;
    if (root->get_option("--workers")->count() > 0 || g.config.empty()) t.workers = g.workers;
    return c;
  }
};

/// Fresh model sized for the loaded vocabularies.
inline Model fresh_model(const RunConfig& c, const LoadedData& d) {
  ModelConfig mc = c.model;
  mc.src_vocab_size = d.src.size();
  mc.tgt_vocab_size = d.tgt.size();
  mc.validate();
  return Model::create(mc, c.train.seed);
}

/// One JSON line naming the subcommand and every option value.
inline nlohmann::json header(const CLI::App& root, const CLI::App& sub) {
  nlohmann::json flags = nlohmann::json::object();
  auto collect = [&](const CLI::App& a) {
    for (const CLI::Option* o : a.get_options()) {
      const std::string name = o->get_single_name();
      if (name.empty() || name == "help") continue;
      if (o->count() > 0) {
        const auto& r = o->results();
        flags[name] = r.size() == 1 ? nlohmann::json(r.front()) : nlohmann::json(r);
      } else if (!o->get_default_str().empty()) {
        flags[name] = o->get_default_str();
      }
    }
  };
  collect(root);
  collect(sub);
  return nlohmann::json{{"command", sub.get_name()}, {"flags", flags}};
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Minimum risk training for attentional translation models"};
  app.name("mrt");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON file of model and training settings");
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--workers", g.workers, "parallel workers")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "no progress output");

  // gen-synthetic
  SyntheticOptions syn;
  std::string syn_task = "lexicon", syn_out;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic parallel corpus");
  gen->add_option("--task", syn_task, "copy, reverse or lexicon")->capture_default_str();
  gen->add_option("--vocab-size", syn.vocab_size)->capture_default_str();
  gen->add_option("--n-train", syn.n_train)->capture_default_str();
  gen->add_option("--n-valid", syn.n_valid)->capture_default_str();
  gen->add_option("--n-test", syn.n_test)->capture_default_str();
  gen->add_option("--min-len", syn.min_len)->capture_default_str();
  gen->add_option("--max-len", syn.max_len)->capture_default_str();
  gen->add_option("--out", syn_out, "output directory")->required();

  // build-vocab
  std::vector<std::string> bv_inputs;
  std::size_t bv_max = 30000;
  std::string bv_out;
  bool bv_lower = false;
  auto* bv = app.add_subcommand("build-vocab", "frequency-ranked vocabulary from text files");
  bv->add_option("--input", bv_inputs, "text files")->required();
  bv->add_option("--max-size", bv_max, "content words kept")->capture_default_str();
  bv->add_option("--output", bv_out)->required();
  bv->add_flag("--lowercase", bv_lower);

  // train
  DataFlags tr_data;
  TrainFlags tr_flags;
  std::string tr_out, tr_curve;
  auto* tr = app.add_subcommand("train", "MLE or MRT training with validation model selection");
  tr_data.add_to(tr);
  tr_flags.add_to(tr, false);
  tr->add_option("--output", tr_out, "best checkpoint path")->required();
  tr->add_option("--curve", tr_curve, "learning curve CSV");

  // decode
  std::string dc_ckpt, dc_in, dc_out, dc_sv, dc_tv;
  std::size_t dc_beam = kDefaultBeamWidth, dc_max_len = 0;
  auto* dc = app.add_subcommand("decode", "beam search translation");
  dc->add_option("--checkpoint", dc_ckpt)->required();
  dc->add_option("--input", dc_in)->required();
  dc->add_option("--output", dc_out, "default: standard output");
  dc->add_option("--beam", dc_beam)->capture_default_str();
  dc->add_option("--max-len", dc_max_len, "longest output in words (default: checkpoint max_len)");
  dc->add_option("--src-vocab", dc_sv)->required();
  dc->add_option("--tgt-vocab", dc_tv)->required();

  // evaluate
  std::string ev_hyp;
  std::vector<std::string> ev_refs;
  auto* ev = app.add_subcommand("evaluate", "corpus BLEU, TER and NIST");
  ev->add_option("--hyp", ev_hyp)->required();
  ev->add_option("--ref", ev_refs, "reference file, or prefix of .0, .1, ...")->required();

  // sample
  std::string sm_ckpt, sm_sv, sm_tv, sm_src, sm_ref, sm_loss = "sbleu";
  std::size_t sm_k = kDefaultSampleSize, sm_max_len = 0;
  double sm_alpha = kDefaultAlpha;
  auto* sm = app.add_subcommand("sample", "dump the sampled candidate space of one sentence");
  sm->add_option("--checkpoint", sm_ckpt)->required();
  sm->add_option("--src-vocab", sm_sv)->required();
  sm->add_option("--tgt-vocab", sm_tv)->required();
  sm->add_option("--src", sm_src, "source sentence")->required();
  sm->add_option("--ref", sm_ref, "gold translation")->required();
  sm->add_option("--k", sm_k)->capture_default_str();
  sm->add_option("--alpha", sm_alpha)->capture_default_str();
  sm->add_option("--loss", sm_loss)->capture_default_str();
  sm->add_option("--max-len", sm_max_len, "longest candidate in words (default: checkpoint max_len)");

  // oracle
  std::size_t or_vocab = 3, or_max_len = 3, or_k = 5000, or_seeds = 50;
  auto* orc = app.add_subcommand("oracle", "exact versus sampled risk on a toy model");
  orc->add_option("--vocab", or_vocab, "content words")->capture_default_str();
  orc->add_option("--max-len", or_max_len, "longest sequence including EOS")->capture_default_str();
  orc->add_option("--k", or_k, "draws for the sampled estimates")->capture_default_str();
  orc->add_option("--seeds", or_seeds, "repeats for the estimator spread")->capture_default_str();

  // sweeps
  DataFlags as_data, ks_data;
  TrainFlags as_flags, ks_flags;
  std::vector<double> as_alphas;
  std::vector<std::size_t> ks_ks;
  std::size_t ks_seeds = 50;
  auto* as = app.add_subcommand("alpha-sweep", "one MRT run per alpha from the same initial checkpoint");
  as_data.add_to(as);
  as_flags.add_to(as, true);
  as->add_option("--alphas", as_alphas)->required()->delimiter(',');
  as->add_option("--k", as_flags.k, "samples per sentence");
  auto* ks = app.add_subcommand("k-sweep", "estimator spread and one MRT run per sample size");
  ks_data.add_to(ks);
  ks_flags.add_to(ks, true);
  ks->add_option("--ks", ks_ks)->required()->delimiter(',');
  ks->add_option("--alpha", ks_flags.alpha, "Q sharpness");
  ks->add_option("--seeds", ks_seeds, "seeds for the estimator spread")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  std::ostream* log = g.quiet ? nullptr : &err;
  try {
    nlohmann::json head = header(app, *sub);

    if (sub == gen) {
      syn.task = parse_task(syn_task);
      syn.seed = g.seed;
      err << head.dump() << '\n';
      write_synthetic(syn_out, gen_synthetic(syn));
      if (log) *log << "wrote " << syn_out << '\n';
      return kExitOk;
    }

    if (sub == bv) {
      err << head.dump() << '\n';
      std::vector<fs::path> files(bv_inputs.begin(), bv_inputs.end());
      const Vocab v = build_vocab_from_files(files, bv_max, bv_lower);
      v.save(bv_out);
      if (log) *log << "vocabulary of " << v.size() << " entries written to " << bv_out << '\n';
      return kExitOk;
    }

    if (sub == ev) {
      err << head.dump() << '\n';
      std::vector<std::vector<std::string>> refs;
      for (const auto& p : expand_references(ev_refs)) refs.push_back(read_lines(p));
      const Scores s = score_text(read_lines(ev_hyp), refs);
      out << fmt("BLEU = %.2f", s.bleu) << '\n' << fmt("TER = %.2f", s.ter) << '\n'
          << fmt("NIST = %.4f", s.nist) << '\n';
      return kExitOk;
    }

    if (sub == dc) {
      err << head.dump() << '\n';
      const Model m = Model::load(dc_ckpt);
      const Vocab sv = Vocab::load(dc_sv), tv = Vocab::load(dc_tv);
      check_vocab_sizes(m, sv.size(), tv.size());
      std::vector<TokenIds> srcs;
      for (const auto& line : read_lines(dc_in)) srcs.push_back(sv.encode(line));
      const std::size_t words = dc_max_len ? dc_max_len : m.config.max_len;
      const auto hyps = decode_corpus(m, srcs, BeamOptions{dc_beam, words + 1, true}, g.workers);
      std::vector<std::string> lines;
      for (const auto& h : hyps) lines.push_back(tv.decode(h));
      if (dc_out.empty()) {
        for (const auto& l : lines) out << l << '\n';
      } else {
        write_lines(dc_out, lines);
      }
      return kExitOk;
    }

    if (sub == sm) {
      err << head.dump() << '\n';
      const Model m = Model::load(sm_ckpt);
      const Vocab sv = Vocab::load(sm_sv), tv = Vocab::load(sm_tv);
      check_vocab_sizes(m, sv.size(), tv.size());
      const TokenIds src = sv.encode(sm_src);
      TokenIds gold = tv.encode(sm_ref);
      gold.push_back(kEos);
      const LossFunction loss = make_loss(parse_loss_kind(sm_loss));
      Rng rng = stream_rng(g.seed, 0);
      const std::size_t words = sm_max_len ? sm_max_len : m.config.max_len;
      const SampledSpace space = sample_space(m, src, gold, sm_k, words + 1, rng);
      const QDistribution q = q_distribution(space, sm_alpha);
      const auto losses = candidate_losses(space, gold, loss);
      for (std::size_t i = 0; i < space.size(); ++i) {
        out << fmt("%.6f", space.logprobs[i]) << '\t' << fmt("%.6f", losses[i]) << '\t' << fmt("%.6f", q.weights[i])
            << '\t';
        bool first = true;
        for (TokenId t : space.candidates[i]) {
          out << (first ? "" : " ") << tv.token(t);
          first = false;
        }
        out << '\n';
      }
      return kExitOk;
    }

    if (sub == orc) {
      err << head.dump() << '\n';
      if (or_vocab == 0 || or_max_len == 0 || or_k == 0 || or_seeds == 0) {
        throw DataError("oracle: --vocab, --max-len, --k and --seeds must be at least 1");
      }
      const Model m = oracle_model(or_vocab, or_max_len, g.seed);
      const TokenIds src{4, 5, 6};
      TokenIds gold;
      for (std::size_t i = 0; i < std::min<std::size_t>(2, or_max_len - 1); ++i) {
        gold.push_back(static_cast<TokenId>(kReservedTokens + i % or_vocab));
      }
      gold.push_back(kEos);
      const LossFunction loss = make_loss(LossKind::kNegSmoothedBleu);
      Rng rng = stream_rng(g.seed, 1);
      const SampledVsExact r = sampled_vs_exact(m, src, gold, loss, or_k, or_max_len, rng);
      const FullSpace full = enumerate_space(m, src, or_max_len);
      Rng freq_rng = stream_rng(g.seed, 2);
      const FrequencyCheck freq =
          sampling_frequency_check(sample_space(m, src, gold, or_k, or_max_len, freq_rng), full);

      auto row = [&](const char* metric, const std::string& alpha, const std::string& k, double v) {
        out << metric << ',' << alpha << ',' << k << ',' << fmt("%.9g", v) << '\n';
      };
      const std::string kk = std::to_string(or_k);
      out << "metric,alpha,k,value\n";
      row("sequences", "", "", static_cast<double>(full.size()));
      row("terminated_mass", "", "", r.terminated_mass);
      row("exact_risk", "1", "", r.exact);
      row("sampled_risk", "1", kk, r.monte_carlo);
      row("standard_error", "1", kk, r.standard_error);
      row("terminated_draws", "", kk, static_cast<double>(r.terminated_draws));
      row("subspace_risk", "1", kk, r.subspace);
      for (double alpha : {1.0, kDefaultAlpha}) {
        row("grad_max_rel_error", fmt("%g", alpha).c_str(), "",
            exact_grad_check(m, src, gold, loss, alpha, or_max_len).max_relative_error);
      }
      row("frequency_within_3se", "", kk, freq.fraction());
      for (std::size_t k : {10u, 100u, 1000u}) {
        const EstimatorSpread s = risk_estimator_spread(m, src, gold, loss, kDefaultAlpha, k, or_max_len, or_seeds, g.seed);
        row("risk_stddev", fmt("%g", kDefaultAlpha), std::to_string(k), s.stddev);
      }
      return kExitOk;
    }

    // training-style subcommands
    DataFlags& data = sub == tr ? tr_data : sub == as ? as_data : ks_data;
    TrainFlags& flags = sub == tr ? tr_flags : sub == as ? as_flags : ks_flags;
    data.resolve();
    RunConfig rc = flags.resolve(g);
    if (sub != tr) rc.train.criterion = Criterion::kMrt;
    if (sub == as && flags.given("--k")) rc.train.k = as_flags.k;
    if (sub == ks && flags.given("--alpha")) rc.train.alpha = ks_flags.alpha;
    // a checkpoint fixes the architecture, including max_len
    std::optional<Model> loaded;
    if (!rc.train.init_checkpoint.empty()) {
      loaded = Model::load(rc.train.init_checkpoint);
      rc.model = loaded->config;
    }
    head["config"] = to_json(rc);
    err << head.dump() << '\n';
    rc.train.validate();
    const LoadedData d = load_data(data, rc.model.max_len);
    if (log) {
      *log << "train " << d.train.size() << " pairs (" << d.train.filtered << " filtered), valid " << d.valid.size()
           << " pairs\n";
    }
    const LossFunction loss = make_loss(rc.train.loss_kind);
    if (loaded) check_vocab_sizes(*loaded, d.src.size(), d.tgt.size());
    const Model init = loaded ? *loaded : fresh_model(rc, d);

    if (sub == tr) {
      const TrainResult r = train(rc.train, init, d.train, d.valid, loss, log);
      r.best.save(tr_out);
      if (!tr_curve.empty()) {
        std::ofstream c(tr_curve, std::ios::trunc);
        if (!c) throw DataError("cannot write '" + tr_curve + "'");
        c << curve_csv(r.curve);
      }
      out << "best_update " << r.best_update << " valid_bleu " << fmt("%.2f", r.best_bleu) << '\n';
      return kExitOk;
    }

    bool failed = false;
    if (sub == as) {
      out << "alpha,valid_bleu\n";
      for (double alpha : as_alphas) {
        TrainConfig c = rc.train;
        c.alpha = alpha;
        try {
          const TrainResult r = train(c, init, d.train, d.valid, loss, log);
          out << fmt("%g", alpha) << ',' << fmt("%.2f", r.best_bleu) << '\n';
        } catch (const Error& e) {
          failed = true;
          err << "alpha " << alpha << ": " << e.what() << '\n';
          out << fmt("%g", alpha) << ",error\n";
        }
      }
    } else {
      const SentencePair& probe = d.train.pairs.front();
      out << "k,risk_stddev,valid_bleu\n";
      for (std::size_t k : ks_ks) {
        TrainConfig c = rc.train;
        c.k = k;
        try {
          c.validate();
          const EstimatorSpread s = risk_estimator_spread(init, probe.src, probe.tgt, loss, c.alpha, k,
                                                          step_limit(init), ks_seeds, c.seed);
          const TrainResult r = train(c, init, d.train, d.valid, loss, log);
          out << k << ',' << fmt("%.9g", s.stddev) << ',' << fmt("%.2f", r.best_bleu) << '\n';
        } catch (const Error& e) {
          failed = true;
          err << "k " << k << ": " << e.what() << '\n';
          out << k << ",error,error\n";
        }
      }
    }
    return failed ? kExitData : kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << sub->help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace mrt::cli
