#pragma once

// Tiny models for exact checks: d_model ≤ 16, one or two layers, 8×8 images.

#include <random>
#include <vector>

#include "magma/model.hpp"
#include "magma/training.hpp"
#include "support/oracles.hpp"

namespace magma::testing {

inline ModelConfig micro_config(std::size_t variant = 0) {
  ModelConfig c;
  c.lm.d_model = 8;
  c.lm.n_layers = 1 + variant % 2;
  c.lm.n_heads = 2;
  c.lm.bos = variant % 5 == 3;
  c.lm.vocab = c.lm.bos ? Tokenizer::kByteVocab : 16;  // BOS needs its id
  c.lm.context = 32;
  c.encoder.kind = EncoderConfig::Kind::conv;
  c.encoder.image_size = 8;
  c.encoder.channels = {4, 4};  // 8 → 4 → 2
  c.prefix.mode = variant % 3 == 2 ? PrefixConfig::Mode::pooled : PrefixConfig::Mode::grid;
  c.prefix.dropout = 0.0;
  AdapterConfig a;
  a.type = variant % 2 ? AdapterType::parallel : AdapterType::sequential;
  a.lambda = variant % 4 >= 2 ? LambdaMode::trained : LambdaMode::fixed;
  a.attn_downsample = 2;
  a.ff_downsample = 4;
  c.adapters = a;
  return c;
}

// Replaces every parameter by U(±scale) so that no path is trivially zero
// (fresh adapters have W_up = 0, fresh classifiers are zero).
template <typename T>
void randomize_parameters(ParameterStore<T>& store, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& [name, t] : store)
    for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng));
}

template <typename T>
VisualInput<T> random_image(std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<T> v(size * size * 3);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return {Tensor<T>({size, size, 3}, std::move(v)), false};
}

template <typename T>
std::vector<CaptionSample<T>> random_caption_batch(const ModelConfig& c, std::size_t batch, std::mt19937_64& rng,
                                                   std::size_t min_len = 1, std::size_t max_len = 5) {
  std::uniform_int_distribution<int> tok(0, static_cast<int>(std::min<std::size_t>(c.lm.vocab, 16)) - 1);
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::vector<CaptionSample<T>> out;
  for (std::size_t b = 0; b < batch; ++b) {
    TokenSequence cap(len(rng));
    for (auto& t : cap) t = tok(rng);
    out.push_back({random_image<T>(c.encoder.image_size, rng), cap});
  }
  return out;
}

// Finite-difference check of caption_loss with respect to every trainable
// tensor of a freshly randomized micro-model.
inline GradCheck caption_loss_grad_check(std::size_t variant, std::uint64_t seed,
                                         std::size_t coords_per_tensor = 6) {
  std::mt19937_64 rng(seed);
  MultimodalModel<double> model(micro_config(variant), seed);
  randomize_parameters(model.parameters(), rng);
  const auto partition = partition_parameters(model.parameters(), TrainMode::multimodal);
  const auto batch = random_caption_batch<double>(model.config(), 2, rng);
  std::vector<Tensor<double>> params;
  for (const auto& name : partition.trainable) params.push_back(model.parameters().get(name));
  return grad_check(
      params,
      [&] { return caption_loss(model, std::span<const CaptionSample<double>>(batch), false, nullptr).loss; },
      coords_per_tensor, seed);
}

}  // namespace magma::testing
