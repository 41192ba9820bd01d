#include "magma/model.hpp"

#include <fmt/format.h>

#include "magma/ops.hpp"

namespace magma {

void ModelConfig::validate() const {
  lm.validate();
  encoder.validate();
  prefix.validate();
  if (adapters) adapters->validate(lm.d_model);
  if (prefix_length() >= lm.context)
    throw UsageError(fmt::format("prefix length {} leaves no room in context {}", prefix_length(), lm.context));
}

template <typename T>
MultimodalModel<T>::MultimodalModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  // Separate streams keep each component's init independent of the others'
  // sizes, so e.g. adding adapters does not change the LM weights.
  std::mt19937_64 lm_rng(seed), enc_rng(seed + 1), prefix_rng(seed + 2), adapter_rng(seed + 3);
  lm_ = std::make_unique<LanguageModel<T>>(config_.lm, store_, lm_rng);
  encoder_ = std::make_unique<VisionEncoder<T>>(config_.encoder, store_, enc_rng);
  prefix_ = std::make_unique<ImagePrefix<T>>(config_.prefix, config_.encoder.output_channels(), config_.lm.d_model,
                                             store_, prefix_rng);
  if (config_.adapters)
    adapters_ = std::make_unique<AdapterSet<T>>(*config_.adapters, config_.lm.d_model, config_.lm.n_layers, store_,
                                                adapter_rng);
}

template <typename T>
Tensor<T> MultimodalModel<T>::encode(std::span<const VisualInput<T>> inputs) const {
  if (inputs.empty()) throw ShapeError("no visual inputs to encode");
  const bool want_grid = config_.encoder.kind == EncoderConfig::Kind::passthrough;
  std::vector<Tensor<T>> parts;
  for (const auto& in : inputs) {
    if (in.is_grid != want_grid)
      throw ShapeError(want_grid ? "passthrough encoder expects feature grids, got an image"
                                 : "conv encoder expects images, got a feature grid");
    if (in.data.rank() != 3) throw ShapeError(fmt::format("visual input {} is not rank 3", shape_str(in.data.shape())));
    Shape batched{1};
    batched.insert(batched.end(), in.data.shape().begin(), in.data.shape().end());
    parts.push_back(ops::reshape(in.data, batched));
  }
  return encoder_->encode(parts.size() == 1 ? parts[0] : ops::concat_rows(parts));
}

template <typename T>
Tensor<T> MultimodalModel<T>::image_prefix(std::span<const VisualInput<T>> inputs, bool train,
                                           std::mt19937_64* rng) const {
  return prefix_->forward(encode(inputs), train, rng).embeddings;
}

template <typename T>
Tensor<T> MultimodalModel<T>::image_prefix(const VisualInput<T>& input) const {
  return image_prefix(std::span<const VisualInput<T>>(&input, 1), false, nullptr);
}

template <typename T>
void MultimodalModel<T>::add_classifier(std::size_t classes) {
  if (has_classifier()) throw Error("classifier head already present");
  if (classes < 2) throw UsageError("classifier needs at least two classes");
  cls_w_ = Tensor<T>::zeros({classes, config_.lm.d_model}, true);
  cls_b_ = Tensor<T>::zeros({classes}, true);
  store_.add("cls.weight", cls_w_);
  store_.add("cls.bias", cls_b_);
}

template <typename T>
Tensor<T> MultimodalModel<T>::classify(const Tensor<T>& hidden) const {
  if (!has_classifier()) throw Error("model has no classifier head");
  return ops::linear(hidden, cls_w_, cls_b_);
}

template class MultimodalModel<float>;
template class MultimodalModel<double>;

}  // namespace magma
