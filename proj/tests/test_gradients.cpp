#include <random>

#include <gtest/gtest.h>

#include "magma/training.hpp"
#include "support/micro.hpp"
#include "support/op_cases.hpp"

namespace magma {
namespace {

using testing::GradCheck;

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, HundredRandomInstances) {
  const auto cases = testing::op_cases();
  const auto& c = cases.at(GetParam());
  std::mt19937_64 rng(1000 + GetParam());
  double worst = 0;
  for (int i = 0; i < 100; ++i) worst = std::max(worst, c.run(rng).max_rel_error);
  EXPECT_LT(worst, 1e-4) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, testing::op_cases().size()),
                         [](const auto& info) { return testing::op_cases().at(info.param).name; });

TEST(LossGradient, CaptionLossAcrossVariants) {
  for (std::size_t v = 0; v < 12; ++v) {
    const auto r = testing::caption_loss_grad_check(v, 50 + v);
    EXPECT_LT(r.max_rel_error, 1e-4) << "variant " << v;
    EXPECT_GT(r.coords, 0u);
  }
}

TEST(LossGradient, PrefixWeightsFullCheck) {
  std::mt19937_64 rng(3);
  MultimodalModel<double> model(testing::micro_config(0), 3);
  testing::randomize_parameters(model.parameters(), rng);
  partition_parameters(model.parameters(), TrainMode::multimodal);
  const auto batch = testing::random_caption_batch<double>(model.config(), 3, rng);
  const auto r = testing::grad_check({model.parameters().get("prefix.proj.weight")}, [&] {
    return caption_loss(model, std::span<const CaptionSample<double>>(batch), false, nullptr).loss;
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_EQ(r.coords, model.parameters().get("prefix.proj.weight").numel());
}

TEST(LossGradient, TextLossThroughLm) {
  std::mt19937_64 rng(4);
  MultimodalModel<double> model(testing::micro_config(1), 4);
  testing::randomize_parameters(model.parameters(), rng);
  const auto part = partition_parameters(model.parameters(), TrainMode::lm_pretrain);
  const std::vector<TokenSequence> corpus{{1, 2, 3, 4}, {5, 6}};
  std::vector<Tensor<double>> params;
  for (const auto& n : part.trainable) params.push_back(model.parameters().get(n));
  const auto r = testing::grad_check(
      params, [&] { return text_loss(model, std::span<const TokenSequence>(corpus)).loss; }, 5);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(LossGradient, ClassifierHead) {
  std::mt19937_64 rng(5);
  auto cfg = testing::micro_config(0);
  MultimodalModel<double> model(cfg, 5);
  model.add_classifier(3);
  testing::randomize_parameters(model.parameters(), rng);
  const auto part = partition_parameters(model.parameters(), TrainMode::snli_finetune);
  std::vector<EntailmentSample<double>> batch;
  for (int i = 0; i < 3; ++i) batch.push_back({testing::random_image<double>(8, rng), {1, 2, i + 3}, i});
  std::vector<int> labels{0, 1, 2};
  std::vector<Tensor<double>> params;
  for (const auto& n : part.trainable) params.push_back(model.parameters().get(n));
  const auto r = testing::grad_check(
      params,
      [&] {
        auto logits =
            classifier_logits(model, std::span<const EntailmentSample<double>>(batch), false, nullptr);
        return ops::cross_entropy<double>(logits, labels);
      },
      5);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

}  // namespace
}  // namespace magma
