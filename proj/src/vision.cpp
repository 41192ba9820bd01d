#include "magma/vision.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "magma/ops.hpp"

namespace magma {

Image preprocess_image(const Image& image, std::size_t size) {
  if (image.height == 0 || image.width == 0 || image.rgb.size() != image.height * image.width * 3)
    throw DataError("image buffer does not match its dimensions");
  if (size == 0) throw UsageError("target resolution must be positive");
  const std::size_t side = std::min(image.height, image.width);
  const std::size_t y0 = (image.height - side) / 2;
  const std::size_t x0 = (image.width - side) / 2;
  Image out{size, size, std::vector<std::uint8_t>(size * size * 3)};
  auto px = [&](std::size_t y, std::size_t x, std::size_t c) {
    return static_cast<double>(image.rgb[((y0 + y) * image.width + x0 + x) * 3 + c]);
  };
  if (side == size) {
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        for (std::size_t c = 0; c < 3; ++c) out.rgb[(y * size + x) * 3 + c] = static_cast<std::uint8_t>(px(y, x, c));
    return out;
  }
  const double ratio = static_cast<double>(side) / static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    const double sy = std::clamp((static_cast<double>(y) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(side - 1));
    const std::size_t y_lo = static_cast<std::size_t>(sy);
    const std::size_t y_hi = std::min(y_lo + 1, side - 1);
    const double fy = sy - static_cast<double>(y_lo);
    for (std::size_t x = 0; x < size; ++x) {
      const double sx = std::clamp((static_cast<double>(x) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(side - 1));
      const std::size_t x_lo = static_cast<std::size_t>(sx);
      const std::size_t x_hi = std::min(x_lo + 1, side - 1);
      const double fx = sx - static_cast<double>(x_lo);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = px(y_lo, x_lo, c) * (1 - fx) + px(y_lo, x_hi, c) * fx;
        const double bottom = px(y_hi, x_lo, c) * (1 - fx) + px(y_hi, x_hi, c) * fx;
        out.rgb[(y * size + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(top * (1 - fy) + bottom * fy));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& image) {
  if (image.rgb.size() != image.height * image.width * 3) throw DataError("image buffer does not match its dimensions");
  std::vector<T> values(image.rgb.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<T>(image.rgb[i]) / T(255);
  return Tensor<T>({image.height, image.width, 3}, std::move(values));
}

std::size_t EncoderConfig::output_grid() const {
  if (kind == Kind::passthrough) return grid_size;
  std::size_t s = image_size;
  for (std::size_t i = 0; i < channels.size(); ++i) s = (s + 1) / 2;
  return s;
}

std::size_t EncoderConfig::output_channels() const {
  return kind == Kind::passthrough ? grid_channels : channels.back();
}

void EncoderConfig::validate() const {
  if (kind == Kind::passthrough) {
    if (grid_size == 0 || grid_channels == 0) throw UsageError("passthrough grid extents must be positive");
    return;
  }
  if (image_size == 0) throw UsageError("image_size must be positive");
  if (channels.empty()) throw UsageError("encoder needs at least one conv stage");
  for (auto c : channels)
    if (c == 0) throw UsageError("encoder channel counts must be positive");
}

void PrefixConfig::validate() const {
  if (mode == Mode::pooled && pooled_length == 0) throw UsageError("pooled prefix length must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError(fmt::format("dropout {} outside [0, 1)", dropout));
}

template <typename T>
VisionEncoder<T>::VisionEncoder(const EncoderConfig& config, ParameterStore<T>& store, std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  if (config_.kind == EncoderConfig::Kind::passthrough) return;
  std::size_t in = 3;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const std::size_t out = config_.channels[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(9 * in));
    auto w = uniform_tensor<T>({out, 3, 3, in}, bound, rng);
    auto b = Tensor<T>::zeros({out});
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    weights_.push_back(store.add(fmt::format("encoder.conv{}.weight", i), w));
    biases_.push_back(store.add(fmt::format("encoder.conv{}.bias", i), b));
    in = out;
  }
}

template <typename T>
Tensor<T> VisionEncoder<T>::encode(const Tensor<T>& batch) const {
  if (config_.kind == EncoderConfig::Kind::passthrough) {
    const std::size_t N = config_.grid_size, C = config_.grid_channels;
    if (batch.rank() != 4 || batch.dim(1) != N || batch.dim(2) != N || batch.dim(3) != C)
      throw ShapeError(fmt::format("passthrough expects grids [B×{}×{}×{}], got {}", N, N, C, shape_str(batch.shape())));
    return batch;
  }
  const std::size_t S = config_.image_size;
  if (batch.rank() != 4 || batch.dim(1) != S || batch.dim(2) != S || batch.dim(3) != 3)
    throw ShapeError(fmt::format("encoder expects images [B×{}×{}×3], got {}", S, S, shape_str(batch.shape())));
  Tensor<T> h = batch;
  for (std::size_t i = 0; i < weights_.size(); ++i) h = ops::relu(ops::conv2d(h, weights_[i], biases_[i], 2, 1));
  return h;
}

template <typename T>
FeatureGrid<T> VisionEncoder<T>::encode_image(const Tensor<T>& image) const {
  if (image.rank() != 3) throw ShapeError("encode_image expects a single [S×S×3] image or [N×N×C] grid");
  Shape batched{1};
  batched.insert(batched.end(), image.shape().begin(), image.shape().end());
  auto grids = encode(ops::reshape(image, batched));
  return FeatureGrid<T>{ops::reshape(grids, Shape(grids.shape().begin() + 1, grids.shape().end()))};
}

template <typename T>
PrefixOutput<T> build_image_prefix(const Tensor<T>& grids, const Tensor<T>& weight, const Tensor<T>& bias,
                                   const Tensor<T>& gain, const Tensor<T>& shift, double dropout, bool train,
                                   std::mt19937_64* rng) {
  if (grids.rank() != 4) throw ShapeError("grid prefix expects [B×N×N×C]");
  const std::size_t B = grids.dim(0), N = grids.dim(1), C = grids.dim(3);
  if (weight.dim(1) != C)
    throw ShapeError(fmt::format("prefix map expects {} channels, grid has {}", weight.dim(1), C));
  if (train && dropout > 0.0 && rng == nullptr) throw UsageError("training-mode prefix needs a random generator");
  std::mt19937_64 unused;
  auto flat = ops::reshape(grids, {B * N * N, C});
  auto projected = ops::dropout(ops::linear(flat, weight, bias), dropout, train, rng ? *rng : unused);
  return {projected, ops::layer_norm(projected, gain, shift)};
}

template <typename T>
PrefixOutput<T> build_pooled_prefix(const Tensor<T>& grids, const Tensor<T>& weight, const Tensor<T>& bias,
                                    const Tensor<T>& gain, const Tensor<T>& shift, std::size_t n, double dropout,
                                    bool train, std::mt19937_64* rng) {
  if (grids.rank() != 4) throw ShapeError("pooled prefix expects [B×N×N×C]");
  const std::size_t B = grids.dim(0), N = grids.dim(1), C = grids.dim(3);
  const std::size_t d = gain.numel();
  if (weight.dim(1) != C || weight.dim(0) != n * d)
    throw ShapeError(fmt::format("pooled prefix map {} does not fit C={} n={} d={}", shape_str(weight.shape()), C, n, d));
  if (train && dropout > 0.0 && rng == nullptr) throw UsageError("training-mode prefix needs a random generator");
  std::mt19937_64 unused;
  auto pooled = ops::mean_pool(ops::reshape(grids, {B, N * N, C}));
  auto projected = ops::reshape(ops::linear(pooled, weight, bias), {B * n, d});
  projected = ops::dropout(projected, dropout, train, rng ? *rng : unused);
  return {projected, ops::layer_norm(projected, gain, shift)};
}

template <typename T>
ImagePrefix<T>::ImagePrefix(const PrefixConfig& config, std::size_t channels, std::size_t d_model,
                            ParameterStore<T>& store, std::mt19937_64& rng)
    : config_(config), channels_(channels), d_model_(d_model) {
  config_.validate();
  const std::size_t out = config_.mode == PrefixConfig::Mode::grid ? d_model : config_.pooled_length * d_model;
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  auto reg = [&store](const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    return store.add(name, std::move(t));
  };
  proj_w_ = reg("prefix.proj.weight", uniform_tensor<T>({out, channels}, bound, rng));
  proj_b_ = reg("prefix.proj.bias", uniform_tensor<T>({out}, bound, rng));
  norm_gain_ = reg("prefix.norm.gain", Tensor<T>::full({d_model}, T(1)));
  norm_bias_ = reg("prefix.norm.bias", Tensor<T>::zeros({d_model}));
}

template <typename T>
PrefixOutput<T> ImagePrefix<T>::forward(const Tensor<T>& grids, bool train, std::mt19937_64* rng) const {
  if (config_.mode == PrefixConfig::Mode::grid)
    return build_image_prefix(grids, proj_w_, proj_b_, norm_gain_, norm_bias_, config_.dropout, train, rng);
  return build_pooled_prefix(grids, proj_w_, proj_b_, norm_gain_, norm_bias_, config_.pooled_length, config_.dropout,
                             train, rng);
}

#define MAGMA_INSTANTIATE_VISION(T)                                                                            \
  template Tensor<T> image_to_tensor<T>(const Image&);                                                         \
  template class VisionEncoder<T>;                                                                             \
  template class ImagePrefix<T>;                                                                               \
  template PrefixOutput<T> build_image_prefix(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                              const Tensor<T>&, const Tensor<T>&, double, bool, std::mt19937_64*); \
  template PrefixOutput<T> build_pooled_prefix(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                               const Tensor<T>&, const Tensor<T>&, std::size_t, double, bool,  \
                                               std::mt19937_64*);

MAGMA_INSTANTIATE_VISION(float)
MAGMA_INSTANTIATE_VISION(double)

}  // namespace magma
