#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mrt/gradcheck.hpp"
#include "mrt/model.hpp"
#include "support/toy.hpp"

namespace mrt {
namespace {

using testing::random_toy_model;
using testing::toy_config;

TEST(InitParams, FirstStepIsUniform) {
  const ModelConfig cfg = toy_config(5);
  const Model m = Model::create(cfg, 1);
  Tape tape;
  const TokenIds src{4, 5};
  const Annotations ann = encode(m, src, tape);
  const StepOutput step = decode_step(m, kBos, initial_state(m, ann, tape), ann, tape);
  for (double p : step_distribution(tape, step)) EXPECT_DOUBLE_EQ(p, 1.0 / static_cast<double>(cfg.tgt_vocab_size));
}

TEST(InitParams, SeedDeterminism) {
  const ModelConfig cfg = toy_config(5);
  EXPECT_EQ(init_params(cfg, 42).to_bytes(), init_params(cfg, 42).to_bytes());
  EXPECT_NE(init_params(cfg, 42).flatten(), init_params(cfg, 43).flatten());
  const ParamStore p = init_params(cfg, 7);
  for (std::size_t k = 0; k < p.size(); ++k) {
    EXPECT_LE(std::abs(p.flat(k)), 0.08);
  }
  const auto& out = p.tensor(kOutW);
  EXPECT_TRUE(std::all_of(out.storage().begin(), out.storage().end(), [](double v) { return v == 0.0; }));
  const auto& bias = p.tensor(kDecB);
  EXPECT_TRUE(std::all_of(bias.storage().begin(), bias.storage().end(), [](double v) { return v == 0.0; }));
}

TEST(ModelConfig, RejectsInvalid) {
  ModelConfig c = toy_config(2);
  c.tgt_vocab_size = 3;
  EXPECT_THROW(c.validate(), DataError);
  c = toy_config(2);
  c.hidden_dim = 0;
  EXPECT_THROW(c.validate(), DataError);
}

TEST(Encode, ShapesAndPositionDependence) {
  const Model m = Model::create(toy_config(3), 5);
  Tape tape;
  const TokenIds one{4};
  EXPECT_EQ(tape.value(encode(m, one, tape).states).rows(), 1u);

  const TokenIds ab{4, 5}, ba{5, 4};
  const Tensor s_ab = tape.value(encode(m, ab, tape).states);
  const Tensor s_ba = tape.value(encode(m, ba, tape).states);
  const Tensor s_ab2 = tape.value(encode(m, ab, tape).states);
  EXPECT_EQ(s_ab.rows(), 2u);
  EXPECT_EQ(s_ab.cols(), 2 * m.config.hidden_dim);
  EXPECT_NE(s_ab, s_ba);
  EXPECT_EQ(s_ab, s_ab2);
}

TEST(Encode, Errors) {
  const Model m = Model::create(toy_config(3), 5);
  Tape tape;
  EXPECT_THROW(encode(m, TokenIds{}, tape), DataError);
  EXPECT_THROW(encode(m, TokenIds{kPad, 4}, tape), DataError);
  EXPECT_THROW(encode(m, TokenIds{4, 99}, tape), DataError);
}

TEST(DecodeStep, DistributionAndAttention) {
  const Model m = random_toy_model(toy_config(4), 3);
  Tape tape;
  const TokenIds single{5};
  const Annotations ann = encode(m, single, tape);
  const StepOutput step = decode_step(m, kBos, initial_state(m, ann, tape), ann, tape);
  const auto dist = step_distribution(tape, step);
  double total = 0.0;
  for (double p : dist) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
    total += p;
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
  const Tensor& attn = tape.value(step.next.attention);
  ASSERT_EQ(attn.size(), 1u);
  EXPECT_EQ(attn[0], 1.0);
  EXPECT_THROW(decode_step(m, 77, step.next, ann, tape), DataError);
}

TEST(DecodeStep, ValidDistributionsAlongRandomPrefixes) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Model m = random_toy_model(toy_config(4), seed, 2.0);
    Tape tape;
    const TokenIds src{4, 6, 5, 4};
    const Annotations ann = encode(m, src, tape);
    StepState state = initial_state(m, ann, tape);
    TokenId prev = kBos;
    for (int n = 0; n < 6; ++n) {
      const StepOutput step = decode_step(m, prev, state, ann, tape);
      const auto dist = step_distribution(tape, step);
      double total = 0.0;
      for (double p : dist) {
        EXPECT_GE(p, 0.0);
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
      const Tensor& attn = tape.value(step.next.attention);
      double attn_total = 0.0;
      for (double a : attn.storage()) {
        EXPECT_GE(a, 0.0);
        attn_total += a;
      }
      EXPECT_NEAR(attn_total, 1.0, 1e-9);
      state = step.next;
      prev = static_cast<TokenId>(4 + n % 4);
    }
  }
}

TEST(SequenceLogProb, UniformModel) {
  const ModelConfig cfg = toy_config(6);
  const Model m = Model::create(cfg, 2);
  const TokenIds tgt{4, 7, 5, kEos};
  const auto lp = sequence_logprob(m, TokenIds{4, 5}, tgt);
  const double v = static_cast<double>(cfg.tgt_vocab_size);
  EXPECT_NEAR(lp.total, 4.0 * std::log(1.0 / v), 1e-12);
  ASSERT_EQ(lp.per_word.size(), 4u);
  double s = 0.0;
  for (double w : lp.per_word) s += w;
  EXPECT_EQ(s, lp.total);
}

TEST(SequenceLogProb, BoundsAndErrors) {
  const Model m = random_toy_model(toy_config(3), 9);
  const auto lp = sequence_logprob(m, TokenIds{4, 5, 6}, TokenIds{5, 4, kEos});
  EXPECT_LE(lp.total, 0.0);
  EXPECT_GT(std::exp(lp.total), 0.0);
  EXPECT_LE(std::exp(lp.total), 1.0);
  EXPECT_THROW(sequence_logprob(m, TokenIds{4}, TokenIds{5, 4}), DataError);
  EXPECT_THROW(sequence_logprob(m, TokenIds{4}, TokenIds{}), DataError);
}

TEST(SequenceLogProb, PaddingIsMasked) {
  const Model m = random_toy_model(toy_config(3), 4);
  const auto plain = sequence_logprob(m, TokenIds{4, 5}, TokenIds{6, 5, kEos});
  const auto padded = sequence_logprob(m, TokenIds{4, 5, kPad, kPad}, TokenIds{6, 5, kEos, kPad, kPad, kPad});
  EXPECT_EQ(plain.total, padded.total);
  EXPECT_EQ(plain.per_word, padded.per_word);
}

TEST(SequenceLogProb, GradientMatchesFiniteDifferences) {
  const Model m = random_toy_model(toy_config(3, 3, 5), 12, 0.5);
  ASSERT_LE(m.params.size(), 2000u);
  const TokenIds src{4, 6, 5};
  const TokenIds tgt{5, 6, 4, kEos};
  Tape tape;
  const Annotations ann = encode(m, src, tape);
  const auto grad = tape.backward(score_tokens(m, ann, tgt, tape));
  const auto fd = finite_diff_grad(
      [&](const ParamStore& p) { return sequence_logprob(Model{m.config, p}, src, tgt).total; }, m.params);
  EXPECT_LE(max_relative_error(grad, fd), 1e-4);
}

TEST(Model, SaveLoadWithSidecar) {
  const Model m = random_toy_model(toy_config(3), 4);
  const std::string path = ::testing::TempDir() + "/model.bin";
  m.save(path);
  const Model back = Model::load(path);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.params.to_bytes(), m.params.to_bytes());
  std::ifstream side(path + ".json");
  const auto j = nlohmann::json::parse(side);
  for (const char* key : {"src_vocab_size", "tgt_vocab_size", "embed_dim", "hidden_dim", "attention_dim", "max_len"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  Model wrong = m;
  wrong.config.hidden_dim += 1;
  EXPECT_THROW(wrong.check_layout(), DataError);
  std::remove(path.c_str());
  std::remove((path + ".json").c_str());
}

}  // namespace
}  // namespace mrt
