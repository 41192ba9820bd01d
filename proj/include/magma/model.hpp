#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>

#include "magma/adapters.hpp"
#include "magma/language_model.hpp"
#include "magma/parameters.hpp"
#include "magma/vision.hpp"

namespace magma {

struct ModelConfig {
  LmConfig lm;
  EncoderConfig encoder;
  PrefixConfig prefix;
  std::optional<AdapterConfig> adapters;

  std::size_t prefix_length() const { return prefix.length(encoder.output_grid()); }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// A preprocessed image [S×S×3] or, for passthrough encoders, a precomputed
/// feature grid [N×N×C].
template <typename T>
struct VisualInput {
  Tensor<T> data;
  bool is_grid = false;
};

/// Visual encoder, image prefix, language model and optional adapters over
/// one shared ParameterStore.
template <typename T>
class MultimodalModel {
 public:
  MultimodalModel(const ModelConfig& config, std::uint64_t seed);
  MultimodalModel(const MultimodalModel&) = delete;
  MultimodalModel& operator=(const MultimodalModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }

  const LanguageModel<T>& lm() const { return *lm_; }
  const VisionEncoder<T>& encoder() const { return *encoder_; }
  const ImagePrefix<T>& prefix() const { return *prefix_; }
  /// nullptr when the configuration has no adapters.
  const AdapterSet<T>* adapters() const { return adapters_.get(); }
  std::size_t prefix_length() const { return config_.prefix_length(); }

  /// Stacks the inputs and runs the encoder: [B×N×N×C].
  Tensor<T> encode(std::span<const VisualInput<T>> inputs) const;
  /// Prefix embeddings for a batch, [B·n × d].
  Tensor<T> image_prefix(std::span<const VisualInput<T>> inputs, bool train, std::mt19937_64* rng) const;
  /// Eval-mode prefix for one input, [n × d].
  Tensor<T> image_prefix(const VisualInput<T>& input) const;

  /// Adds a zero-initialised linear head on the final hidden state,
  /// registered as "cls.weight" / "cls.bias".
  void add_classifier(std::size_t classes);
  bool has_classifier() const { return cls_w_.defined(); }
  std::size_t classifier_classes() const { return has_classifier() ? cls_w_.dim(0) : 0; }
  /// [B × d] → [B × classes]
  Tensor<T> classify(const Tensor<T>& hidden) const;

 private:
  ModelConfig config_;
  ParameterStore<T> store_;
  std::unique_ptr<LanguageModel<T>> lm_;
  std::unique_ptr<VisionEncoder<T>> encoder_;
  std::unique_ptr<ImagePrefix<T>> prefix_;
  std::unique_ptr<AdapterSet<T>> adapters_;
  Tensor<T> cls_w_, cls_b_;
};

extern template class MultimodalModel<float>;
extern template class MultimodalModel<double>;

}  // namespace magma
