#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "magma/parameters.hpp"
#include "magma/tensor.hpp"

namespace magma {

/// 8-bit RGB image, row-major, interleaved channels.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;
};

/// Center-crops to a square and resizes (bilinear) to size×size.
Image preprocess_image(const Image& image, std::size_t size);

/// [H×W×3] tensor with values scaled to [0,1].
template <typename T>
Tensor<T> image_to_tensor(const Image& image);

struct EncoderConfig {
  enum class Kind { conv, passthrough };
  Kind kind = Kind::conv;
  std::size_t image_size = 64;
  // Output channels of each stride-2 3×3 conv + ReLU stage.
  std::vector<std::size_t> channels{16, 32, 32, 32};
  // Passthrough mode: grids are read from files with these extents.
  std::size_t grid_size = 4;
  std::size_t grid_channels = 32;

  std::size_t output_grid() const;
  std::size_t output_channels() const;
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct PrefixConfig {
  enum class Mode { grid, pooled };
  Mode mode = Mode::grid;
  std::size_t pooled_length = 2;
  double dropout = 0.1;

  /// Number of prefix vectors for an N×N feature grid.
  std::size_t length(std::size_t grid_side) const { return mode == Mode::grid ? grid_side * grid_side : pooled_length; }
  void validate() const;
  bool operator==(const PrefixConfig&) const = default;
};

/// Visual encoder output for one image.
template <typename T>
struct FeatureGrid {
  Tensor<T> grid;  // [N × N × C]
  std::size_t side() const { return grid.dim(0); }
  std::size_t channels() const { return grid.dim(2); }
};

/// Small strided conv stack standing in for a pretrained backbone. Tensors
/// live under "encoder.conv{i}.{weight|bias}". In passthrough mode there are
/// no parameters and precomputed grids are returned unchanged.
template <typename T>
class VisionEncoder {
 public:
  VisionEncoder(const EncoderConfig& config, ParameterStore<T>& store, std::mt19937_64& rng);

  const EncoderConfig& config() const { return config_; }

  /// images [B×S×S×3] → grids [B×N×N×C]; passthrough expects grids already.
  Tensor<T> encode(const Tensor<T>& batch) const;
  /// Single preprocessed image tensor [S×S×3] → FeatureGrid.
  FeatureGrid<T> encode_image(const Tensor<T>& image) const;

 private:
  EncoderConfig config_;
  std::vector<Tensor<T>> weights_, biases_;
};

template <typename T>
struct PrefixOutput {
  Tensor<T> pre_norm;    // after linear map (and dropout), before layer norm
  Tensor<T> embeddings;  // [B·n × d_model]
};

/// Maps feature grids to n language-space vectors: linear map, dropout,
/// layer norm. Tensors live under "prefix.{proj|norm}.*".
template <typename T>
class ImagePrefix {
 public:
  ImagePrefix(const PrefixConfig& config, std::size_t channels, std::size_t d_model, ParameterStore<T>& store,
              std::mt19937_64& rng);

  const PrefixConfig& config() const { return config_; }
  const Tensor<T>& proj_weight() const { return proj_w_; }
  const Tensor<T>& proj_bias() const { return proj_b_; }

  /// Prefix length for a given grid side.
  std::size_t length(std::size_t grid_side) const { return config_.length(grid_side); }

  /// grids [B×N×N×C] → embeddings [B·n × d]. rng is only used when train.
  PrefixOutput<T> forward(const Tensor<T>& grids, bool train, std::mt19937_64* rng) const;

 private:
  PrefixConfig config_;
  std::size_t channels_, d_model_;
  Tensor<T> proj_w_, proj_b_, norm_gain_, norm_bias_;
};

/// Grid mode: flatten N×N to N² vectors, shared linear C→d, dropout, norm.
template <typename T>
PrefixOutput<T> build_image_prefix(const Tensor<T>& grids, const Tensor<T>& weight, const Tensor<T>& bias,
                                   const Tensor<T>& gain, const Tensor<T>& shift, double dropout, bool train,
                                   std::mt19937_64* rng);

/// Pooled mode: average the grid, linear C→n·d, split into n vectors,
/// dropout, norm.
template <typename T>
PrefixOutput<T> build_pooled_prefix(const Tensor<T>& grids, const Tensor<T>& weight, const Tensor<T>& bias,
                                    const Tensor<T>& gain, const Tensor<T>& shift, std::size_t n, double dropout,
                                    bool train, std::mt19937_64* rng);

extern template class VisionEncoder<float>;
extern template class VisionEncoder<double>;
extern template class ImagePrefix<float>;
extern template class ImagePrefix<double>;

}  // namespace magma
