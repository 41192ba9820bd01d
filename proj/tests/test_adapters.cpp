#include <random>

#include <gtest/gtest.h>

#include "magma/adapters.hpp"
#include "magma/ops.hpp"
#include "magma/model.hpp"
#include "magma/training.hpp"
#include "support/micro.hpp"

namespace magma {
namespace {

using D = Tensor<double>;
using testing::random_tensor;

// d_h = 2, d_b = 1, W_down = [1, 1], W_up = [2, 0]ᵀ
AdapterParams<double> hand_adapter(LambdaMode mode = LambdaMode::fixed, double lambda = 1.0) {
  AdapterParams<double> a;
  a.down = D({1, 2}, {1, 1});
  a.up = D({2, 1}, {2, 0});
  if (mode == LambdaMode::trained) a.lambda = D({1}, {lambda});
  return a;
}

void expect_values(const D& t, std::vector<double> want, double tol = 1e-14) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.data()[i], want[i], tol) << i;
}

TEST(AdapterForward, HandEvaluated) {
  // ReLU(1 + 2) = 3 → h + [6, 0]
  expect_values(adapter_forward(D({1, 2}, {1, 2}), hand_adapter()), {7, 2});
}

TEST(AdapterForward, ZeroUpIsIdentity) {
  std::mt19937_64 rng(1);
  auto a = make_adapter<double>(8, 4, LambdaMode::fixed, rng);
  EXPECT_EQ(a.bottleneck(), 2u);
  EXPECT_EQ(a.width(), 8u);
  for (double v : a.up.data()) EXPECT_EQ(v, 0.0);
  const auto h = random_tensor({5, 8}, rng);
  const auto out = adapter_forward(h, a);
  for (std::size_t i = 0; i < h.numel(); ++i) EXPECT_EQ(out.data()[i], h.data()[i]);
}

TEST(AdapterForward, ZeroLambdaIsIdentity) {
  expect_values(adapter_forward(D({1, 2}, {1, 2}), hand_adapter(LambdaMode::trained, 0.0)), {1, 2});
  expect_values(adapter_forward(D({1, 2}, {1, 2}), hand_adapter(LambdaMode::trained, 0.5)), {4, 2});
}

TEST(AdapterForward, DimensionMismatchThrows) {
  EXPECT_THROW(adapter_forward(D::zeros({1, 3}), hand_adapter()), ShapeError);
}

TEST(AdapterForward, InitBoundsDown) {
  std::mt19937_64 rng(2);
  const auto a = make_adapter<double>(16, 4, LambdaMode::trained, rng);
  for (double v : a.down.data()) EXPECT_LE(std::abs(v), 1.0 / 4.0);
  expect_values(a.lambda, {1.0});
}

TEST(AdapterForward, ResidualLiesInSpanOfUp) {
  // d_b = 1: every row of A(h) − h is a multiple of the single W_up column.
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    AdapterParams<double> a{random_tensor({1, 4}, rng), random_tensor({4, 1}, rng), {}};
    const auto h = random_tensor({6, 4}, rng);
    const auto out = adapter_forward(h, a);
    for (std::size_t r = 0; r < 6; ++r) {
      // cross-ratio test against the column u: diff_i·u_j − diff_j·u_i = 0
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          const double di = out.data()[r * 4 + i] - h.data()[r * 4 + i];
          const double dj = out.data()[r * 4 + j] - h.data()[r * 4 + j];
          EXPECT_NEAR(di * a.up.data()[j] - dj * a.up.data()[i], 0.0, 1e-12);
        }
    }
  }
}

TEST(AdaptBlock, ZeroUpSequentialDoublesBlock) {
  std::mt19937_64 rng(4);
  auto a = make_adapter<double>(4, 2, LambdaMode::fixed, rng);
  const auto w = random_tensor({4, 4}, rng);
  BlockFn<double> block = [w](const D& h) { return ops::linear(h, w); };
  const auto h = random_tensor({3, 4}, rng);
  const auto b = block(h);
  const auto seq = adapt_block(block, a, AdapterType::sequential)(h);
  const auto par = adapt_block(block, a, AdapterType::parallel)(h);
  for (std::size_t i = 0; i < h.numel(); ++i) {
    EXPECT_NEAR(seq.data()[i], 2 * b.data()[i], 1e-14);
    EXPECT_NEAR(par.data()[i], b.data()[i] + h.data()[i], 1e-14);
  }
}

TEST(AdaptBlock, ToyBlockSubstitution) {
  // B(h) = 2h, h = [1, 2]: B(h) = [2, 4], A(B(h)) = [2, 4] + [2, 0]·ReLU(6) = [14, 4], A(h) = [7, 2]
  BlockFn<double> twice = [](const D& h) { return ops::scale(h, 2.0); };
  const D h({1, 2}, {1, 2});
  expect_values(adapt_block(twice, hand_adapter(), AdapterType::sequential)(h), {2 + 14, 4 + 4});
  expect_values(adapt_block(twice, hand_adapter(), AdapterType::parallel)(h), {2 + 7, 4 + 2});
}

TEST(AdaptBranch, ZeroUpReturnsBranchExactly) {
  std::mt19937_64 rng(5);
  auto a = make_adapter<float>(8, 2, LambdaMode::trained, rng);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> xs(24), ys(24);
  for (auto& v : xs) v = u(rng);
  for (auto& v : ys) v = u(rng);
  const Tensor<float> in({3, 8}, xs), out({3, 8}, ys);
  for (auto type : {AdapterType::sequential, AdapterType::parallel}) {
    const auto r = adapt_branch(out, in, a, type);
    for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(r.data()[i], ys[i]);
  }
}

TEST(AdaptBranch, MatchesBranchFormula) {
  std::mt19937_64 rng(6);
  AdapterParams<double> a{random_tensor({2, 4}, rng), random_tensor({4, 2}, rng), D({1}, {0.7})};
  const auto in = random_tensor({3, 4}, rng), out = random_tensor({3, 4}, rng);
  const auto seq = adapt_branch(out, in, a, AdapterType::sequential);
  const auto par = adapt_branch(out, in, a, AdapterType::parallel);
  const auto bs = adapter_branch(out, a), bp = adapter_branch(in, a);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_NEAR(seq.data()[i], out.data()[i] + bs.data()[i], 1e-14);
    EXPECT_NEAR(par.data()[i], out.data()[i] + bp.data()[i], 1e-14);
  }
}

AdapterConfig ff_only(std::size_t factor, LambdaMode mode = LambdaMode::fixed) {
  AdapterConfig c;
  c.lambda = mode;
  c.ff_downsample = factor;
  return c;
}

TEST(ParamCount, FfDownsampleTwoVersusFourIsTwoToOne) {
  for (std::size_t d : {16u, 128u, 4096u}) {
    const auto two = count_trainable_params(ff_only(2), d, 4), four = count_trainable_params(ff_only(4), d, 4);
    EXPECT_EQ(two, 2 * four);
  }
}

TEST(ParamCount, ArithmeticExamples) {
  EXPECT_EQ(count_trainable_params(std::nullopt, 128, 4), 0u);
  AdapterConfig c;
  c.attn_downsample = 8;
  c.ff_downsample = 8;
  EXPECT_EQ(count_trainable_params(c, 128, 4), 32768u);
  c.lambda = LambdaMode::trained;
  EXPECT_EQ(count_trainable_params(c, 128, 4), 32768u + 8u);
}

TEST(ParamCount, MatchesRegisteredTensors) {
  for (const char* row : {"s 1 8 8", "p t -- 2", "s t 4 --", "p 1 2 16"}) {
    const auto cfg = *AdapterConfig::parse(row);
    std::mt19937_64 rng(7);
    ParameterStore<float> store;
    AdapterSet<float> set(cfg, 32, 3, store, rng);
    EXPECT_EQ(store.numel(), count_trainable_params(cfg, 32, 3)) << row;
    for (const auto& n : store.names()) EXPECT_EQ(n.rfind("adapter.", 0), 0u) << n;
  }
}

TEST(ParamCount, TensorNaming) {
  std::mt19937_64 rng(8);
  ParameterStore<float> store;
  AdapterSet<float> set(*AdapterConfig::parse("s t 8 --"), 16, 2, store, rng);
  EXPECT_EQ(store.names(), (std::vector<std::string>{"adapter.0.attn.down", "adapter.0.attn.lambda",
                                                      "adapter.0.attn.up", "adapter.1.attn.down",
                                                      "adapter.1.attn.lambda", "adapter.1.attn.up"}));
  EXPECT_FALSE(set.layer(0).ff.has_value());
}

TEST(Notation, TableRows) {
  const auto a = AdapterConfig::parse("s 1 12 6");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->type, AdapterType::sequential);
  EXPECT_EQ(a->lambda, LambdaMode::fixed);
  EXPECT_EQ(a->attn_downsample, 12u);
  EXPECT_EQ(a->ff_downsample, 6u);
  EXPECT_FALSE(AdapterConfig::parse("--").has_value());
  EXPECT_FALSE(AdapterConfig::parse("s 1 -- --").has_value());
  const auto b = AdapterConfig::parse("p t -- 4");
  ASSERT_TRUE(b);
  EXPECT_EQ(b->type, AdapterType::parallel);
  EXPECT_EQ(b->lambda, LambdaMode::trained);
  EXPECT_FALSE(b->attn_downsample);
  EXPECT_EQ(b->notation(), "p t -- 4");
}

TEST(Notation, KeyedForm) {
  const auto a = AdapterConfig::parse("type=s lambda=1 attn=8 ff=8");
  ASSERT_TRUE(a);
  EXPECT_EQ(*a, *AdapterConfig::parse("s 1 8 8"));
}

TEST(Notation, Rejects) {
  for (const char* bad : {"x 1 8 8", "s 2 8 8", "s 1 0 8", "s 1 8", "s 1 eight 8", "type=s ff=8 ff=4"})
    EXPECT_THROW(AdapterConfig::parse(bad), UsageError) << bad;
  EXPECT_THROW(AdapterConfig::parse("s 1 12 6")->validate(128), UsageError);  // 12 does not divide 128
  EXPECT_NO_THROW(AdapterConfig::parse("s 1 8 4")->validate(128));
}

// Model-level identities on a small float model.
ModelConfig adapted_config(const char* notation) {
  ModelConfig c;
  c.lm.d_model = 16;
  c.lm.n_layers = 2;
  c.lm.n_heads = 2;
  c.lm.vocab = 32;
  c.lm.context = 40;
  c.encoder.kind = EncoderConfig::Kind::passthrough;
  c.encoder.grid_size = 2;
  c.encoder.grid_channels = 4;
  c.prefix.dropout = 0.0;
  c.adapters = AdapterConfig::parse(notation);
  return c;
}

PromptSequence<float> random_prompt(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> tok(0, 31), len(1, 12);
  std::normal_distribution<float> g;
  PromptSequence<float> p;
  std::vector<float> pre(4 * 16);
  for (auto& v : pre) v = g(rng);
  p.add_prefix(Tensor<float>({4, 16}, pre));
  TokenSequence t(static_cast<std::size_t>(len(rng)));
  for (auto& x : t) x = tok(rng);
  p.add_tokens(t);
  return p;
}

TEST(ModelIdentity, FreshAdaptersLeaveLogitsBitExact) {
  for (const char* n : {"s 1 8 8", "p t 4 2", "s t -- 2"}) {
    MultimodalModel<float> model(adapted_config(n), 9);
    std::mt19937_64 rng(10);
    for (int i = 0; i < 10; ++i) {
      const auto p = random_prompt(rng);
      const auto base = model.lm().lm_logits(p, nullptr), adapted = model.lm().lm_logits(p, model.adapters());
      for (std::size_t j = 0; j < base.numel(); ++j) ASSERT_EQ(base.data()[j], adapted.data()[j]) << n;
    }
  }
}

TEST(ModelIdentity, RemovingTrainedAdaptersRestoresBase) {
  MultimodalModel<float> model(adapted_config("s 1 4 4"), 11);
  std::mt19937_64 rng(12);
  std::vector<PromptSequence<float>> prompts;
  std::vector<Tensor<float>> before;
  for (int i = 0; i < 5; ++i) {
    prompts.push_back(random_prompt(rng));
    before.push_back(model.lm().lm_logits(prompts.back(), nullptr));
  }
  std::vector<CaptionSample<float>> data;
  std::normal_distribution<float> g;
  for (int i = 0; i < 4; ++i) {
    std::vector<float> grid(2 * 2 * 4);
    for (auto& v : grid) v = g(rng);
    data.push_back({{Tensor<float>({2, 2, 4}, grid), true}, {1, 2, 3, static_cast<int>(i)}});
  }
  TrainConfig tc;
  tc.batch_size = 4;
  tc.lr_head = 1e-2;
  tc.total_steps = 10;
  Trainer<float> trainer(model, tc, TrainMode::multimodal);
  train_captions(trainer, std::span<const CaptionSample<float>>(data), 10);

  bool adapted_differs = false;
  for (int i = 0; i < 5; ++i) {
    const auto after = model.lm().lm_logits(prompts[i], nullptr);
    for (std::size_t j = 0; j < after.numel(); ++j) ASSERT_EQ(after.data()[j], before[i].data()[j]);
    const auto adapted = model.lm().lm_logits(prompts[i], model.adapters());
    for (std::size_t j = 0; j < after.numel(); ++j) adapted_differs |= adapted.data()[j] != after.data()[j];
  }
  EXPECT_TRUE(adapted_differs);
}

}  // namespace
}  // namespace magma
