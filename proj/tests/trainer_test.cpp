#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "mrt/trainer.hpp"
#include "support/toy.hpp"

namespace mrt {
namespace {

using testing::random_toy_model;
using testing::toy_config;

struct Task {
  Vocab src, tgt;
  Corpus train, valid;
  ModelConfig config;
};

Task make_task(SyntheticTask kind, std::size_t vocab, std::size_t n_train, std::size_t n_valid, std::uint64_t seed) {
  SyntheticOptions o;
  o.task = kind;
  o.vocab_size = vocab;
  o.n_train = n_train;
  o.n_valid = n_valid;
  o.n_test = 1;
  o.min_len = 3;
  o.max_len = 6;
  o.seed = seed;
  const SyntheticData d = gen_synthetic(o);
  Task t;
  t.src = build_vocab(d.train.src, 100);
  t.tgt = build_vocab(d.train.tgt, 100);
  t.train = parallel_from_lines(d.train.src, d.train.tgt, t.src, t.tgt, 6, "train");
  t.valid = parallel_from_lines(d.valid.src, d.valid.tgt, t.src, t.tgt, 6, "valid");
  t.config.src_vocab_size = t.src.size();
  t.config.tgt_vocab_size = t.tgt.size();
  t.config.embed_dim = 12;
  t.config.hidden_dim = 16;
  t.config.attention_dim = 12;
  t.config.max_len = 6;
  return t;
}

TrainConfig small_config(Criterion c) {
  TrainConfig cfg;
  cfg.criterion = c;
  cfg.batch_size = 8;
  cfg.max_updates = 6;
  cfg.eval_every = 3;
  cfg.k = 5;
  cfg.beam = 3;
  cfg.allow_random_init = true;
  return cfg;
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.criterion = Criterion::kMrt;
  c.init_checkpoint = "mle.ckpt";
  c.k = 20;
  c.optimizer = Optimizer::kAdam;
  c.stop_at_bleu = 60.0;
  const nlohmann::json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_DOUBLE_EQ(back.lr(), 0.05);
  EXPECT_DOUBLE_EQ(TrainConfig{}.lr(), 0.5);
  EXPECT_THROW(nlohmann::json({{"batch", 3}}).get<TrainConfig>(), DataError);
  EXPECT_THROW(nlohmann::json({{"optimizer", "lbfgs"}}).get<TrainConfig>(), DataError);

  TrainConfig mrt;
  mrt.criterion = Criterion::kMrt;
  EXPECT_THROW(mrt.validate(), DataError);
  mrt.allow_random_init = true;
  EXPECT_NO_THROW(mrt.validate());
}

TEST(Train, ZeroUpdatesReturnsInitial) {
  const Task t = make_task(SyntheticTask::kCopy, 6, 20, 5, 1);
  const Model init = Model::create(t.config, 3);
  TrainConfig cfg = small_config(Criterion::kMle);
  cfg.max_updates = 0;
  const TrainResult r = train(cfg, init, t.train, t.valid, make_loss(LossKind::kNegSmoothedBleu));
  EXPECT_TRUE(r.curve.empty());
  EXPECT_EQ(r.best.params, init.params);
  EXPECT_EQ(r.last.params, init.params);
}

TEST(Train, DeterministicAcrossRunsAndWorkers) {
  const Task t = make_task(SyntheticTask::kReverse, 6, 40, 6, 2);
  const Model init = random_toy_model(t.config, 4, 0.2);
  const LossFunction loss = make_loss(LossKind::kNegSmoothedBleu);
  for (Criterion c : {Criterion::kMle, Criterion::kMrt}) {
    TrainConfig cfg = small_config(c);
    cfg.optimizer = Optimizer::kAdam;
    cfg.learning_rate = 0.01;
    const TrainResult a = train(cfg, init, t.train, t.valid, loss);
    const TrainResult b = train(cfg, init, t.train, t.valid, loss);
    cfg.workers = 3;
    const TrainResult w = train(cfg, init, t.train, t.valid, loss);
    ASSERT_EQ(a.curve.size(), 2u);
    EXPECT_EQ(curve_csv(a.curve, false), curve_csv(b.curve, false));
    EXPECT_EQ(curve_csv(a.curve, false), curve_csv(w.curve, false));
    EXPECT_EQ(a.best.params.to_bytes(), b.best.params.to_bytes());
    EXPECT_EQ(a.best.params.to_bytes(), w.best.params.to_bytes());
    EXPECT_LT(a.curve[0].update, a.curve[1].update);
  }
}

TEST(Train, CurveCsvFormat) {
  const std::vector<CurvePoint> curve{{10, 1.5, 42.0, -0.25}};
  EXPECT_EQ(curve_csv(curve), "update,seconds,valid_bleu,train_objective\n10,1.500,42.000000,-0.250000000\n");
}

TEST(Optimizer, ClippingBoundsNorm) {
  Rng rng(5);
  std::normal_distribution<double> n(0.0, 10.0);
  for (double clip : {1e-3, 0.5, 1.0, 7.0}) {
    std::vector<double> g(300);
    for (double& v : g) v = n(rng);
    const double before = clip_global_norm(g, clip);
    EXPECT_LE(global_norm(g), clip + 1e-9);
    if (before <= clip) {
      EXPECT_DOUBLE_EQ(global_norm(g), before);
    }
  }
  std::vector<double> small{0.1, 0.2};
  clip_global_norm(small, 1.0);
  EXPECT_EQ(small, (std::vector<double>{0.1, 0.2}));
}

TEST(Optimizer, AdamFirstStepIsSignedLearningRate) {
  ParamStore p;
  p.add("w", Tensor::row({1.0, -2.0, 0.5}));
  TrainConfig c;
  c.optimizer = Optimizer::kAdam;
  c.learning_rate = 0.1;
  OptimizerState opt(c, p.size());
  opt.step(p, std::vector<double>{3.0, -0.5, 0.0});
  EXPECT_NEAR(p.flat(0), 0.9, 1e-7);
  EXPECT_NEAR(p.flat(1), -1.9, 1e-7);
  EXPECT_EQ(p.flat(2), 0.5);
}

TEST(Train, NonFiniteGradientNamesBatch) {
  const Task t = make_task(SyntheticTask::kCopy, 6, 20, 5, 1);
  Model bad = Model::create(t.config, 3);
  bad.params.tensor(kOutB)[kEos] = std::numeric_limits<double>::quiet_NaN();
  try {
    batch_gradient(bad, t.train, std::vector<std::size_t>{0, 1}, small_config(Criterion::kMle),
                   make_loss(LossKind::kNegSmoothedBleu), 1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("#1 src:"), std::string::npos) << e.what();
  }
}

TEST(Evaluate, StubOutputs) {
  const std::vector<std::vector<TokenIds>> refs{{{4, 5, 6, 7}, {4, 5, 6, 7}}, {{6, 5, 4}, {6, 5, 4}}};
  const std::vector<TokenIds> perfect{{4, 5, 6, 7, kEos}, {6, 5, 4, kEos}};
  const Scores s = score_corpus(perfect, refs);
  EXPECT_DOUBLE_EQ(s.bleu, 100.0);
  EXPECT_EQ(s.ter, 0.0);
  EXPECT_GT(s.nist, 0.0);
  const std::vector<TokenIds> empty{{kEos}, {kEos}};
  EXPECT_EQ(score_corpus(empty, refs).bleu, 0.0);
  EXPECT_DOUBLE_EQ(score_corpus(empty, refs).ter, 100.0);
}

TEST(Evaluate, OrderInvariant) {
  const Task t = make_task(SyntheticTask::kReverse, 8, 10, 30, 5);
  const Model m = random_toy_model(t.config, 8, 0.8);
  const Scores a = evaluate_checkpoint(m, t.valid, 3);
  Corpus shuffled = t.valid;
  std::vector<std::size_t> order(shuffled.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(1);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); ++i) {
    shuffled.pairs[i] = t.valid.pairs[order[i]];
    shuffled.references[i] = t.valid.references[order[i]];
  }
  const Scores b = evaluate_checkpoint(m, shuffled, 3, 2);
  EXPECT_NEAR(a.bleu, b.bleu, 1e-9);
  EXPECT_NEAR(a.ter, b.ter, 1e-9);
  EXPECT_NEAR(a.nist, b.nist, 1e-9);
  EXPECT_THROW(check_vocab_sizes(m, t.src.size(), t.tgt.size() + 1), DataError);
}

TEST(MrtStep, SmallStepDoesNotIncreaseFixedSpaceRisk) {
  const LossFunction loss = make_loss(LossKind::kNegSmoothedBleu);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Model m = random_toy_model(toy_config(4, 4), seed, 0.5);
    const TokenIds src{4, 5, 6}, gold{4, 6, kEos};
    Rng rng = stream_rng(seed, 3);
    const SampledSpace space = sample_space(m, src, gold, 10, 4, rng);
    const auto losses = candidate_losses(space, gold, loss);
    for (double alpha : {1.0, kDefaultAlpha}) {
      const QDistribution q = q_distribution(space, alpha);
      const RiskReport before = expected_risk(q, losses);
      auto g = mrt_grad(m, src, space, q, before, alpha);
      const double norm = global_norm(g);
      if (norm == 0.0) continue;
      Model stepped = m;
      stepped.params.axpy(-1e-3 / norm, g);
      const RiskAndGrad after = mrt_grad_through_q(stepped, src, space.candidates, losses, alpha);
      EXPECT_LE(after.risk, before.expected_risk) << "seed " << seed << " alpha " << alpha;
    }
  }
}

// MLE on the copy task, then MRT fine-tuning from that checkpoint.
TEST(Train, CopyTaskMleThenMrtLowersRisk) {
  Task t = make_task(SyntheticTask::kCopy, 12, 2000, 100, 7);
  t.config.embed_dim = 16;
  t.config.hidden_dim = 32;
  t.config.attention_dim = 16;
  const LossFunction loss = make_loss(LossKind::kNegSmoothedBleu);
  TrainConfig mle;
  mle.batch_size = 20;
  mle.optimizer = Optimizer::kAdam;
  mle.learning_rate = 5e-3;
  mle.max_updates = 3000;
  mle.eval_every = 50;
  mle.beam = 10;
  mle.stop_at_bleu = 95.0;
  const TrainResult r = train(mle, Model::create(t.config, 1), t.train, t.valid, loss);
  EXPECT_GT(r.best_bleu, 90.0);

  // measured on a fixed subset with fixed sample sets
  Corpus subset = t.train;
  subset.pairs.resize(200);
  subset.references.resize(200);
  TrainConfig mrt = mle;
  mrt.criterion = Criterion::kMrt;
  mrt.allow_random_init = true;
  mrt.learning_rate = 1e-3;
  mrt.k = 20;
  mrt.max_updates = 40;
  mrt.eval_every = 40;
  mrt.stop_at_bleu.reset();
  const double risk_before = mean_training_risk(r.best, subset, mrt, loss, 11);
  const TrainResult tuned = train(mrt, r.best, subset, t.valid, loss);
  const double risk_after = mean_training_risk(tuned.last, subset, mrt, loss, 11);
  EXPECT_LT(risk_after, risk_before);
}

}  // namespace
}  // namespace mrt
