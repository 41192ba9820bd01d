#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "magma/parameters.hpp"
#include "magma/tensor.hpp"

namespace magma {

enum class AdapterType { sequential, parallel };
enum class LambdaMode { fixed, trained };

/// One row of the adapter ablation table: where adapters go and how wide
/// their bottleneck is, expressed as downsample factors d_h / d_b.
struct AdapterConfig {
  AdapterType type = AdapterType::sequential;
  LambdaMode lambda = LambdaMode::fixed;
  std::optional<std::size_t> attn_downsample;
  std::optional<std::size_t> ff_downsample;

  /// Throws UsageError unless at least one position is adapted and every
  /// factor divides d_model.
  void validate(std::size_t d_model) const;

  /// Table notation "s 1 8 8": type, λ, attn factor, ff factor, "--" = absent.
  std::string notation() const;

  /// Accepts the table notation or the keyed form "type=s lambda=1 attn=8 ff=8".
  /// Returns nullopt for "--" (no adapters at all).
  static std::optional<AdapterConfig> parse(std::string_view text);

  bool operator==(const AdapterConfig&) const = default;
};

/// Trainable tensors of one adapter: W_down [d_b×d_h], W_up [d_h×d_b] and,
/// in trained-λ mode, a one-element λ.
template <typename T>
struct AdapterParams {
  Tensor<T> down;
  Tensor<T> up;
  Tensor<T> lambda;  // undefined when λ is fixed to 1

  std::size_t bottleneck() const { return down.dim(0); }
  std::size_t width() const { return down.dim(1); }
};

/// Fresh adapter with W_up = 0 (identity map) and W_down ~ U(±1/√d_h).
template <typename T>
AdapterParams<T> make_adapter(std::size_t d_model, std::size_t downsample, LambdaMode lambda, std::mt19937_64& rng);

/// A(h) = h + λ · W_up · ReLU(W_down · h), row-wise over h[m×d_h].
template <typename T>
Tensor<T> adapter_forward(const Tensor<T>& h, const AdapterParams<T>& a);

/// The bottleneck branch alone: λ · W_up · ReLU(W_down · h).
template <typename T>
Tensor<T> adapter_branch(const Tensor<T>& h, const AdapterParams<T>& a);

template <typename T>
using BlockFn = std::function<Tensor<T>(const Tensor<T>&)>;

/// Block adaptation as written for a standalone block B:
///   sequential: h ↦ B(h) + A(B(h))      parallel: h ↦ B(h) + A(h)
template <typename T>
BlockFn<T> adapt_block(BlockFn<T> block, AdapterParams<T> a, AdapterType type);

/// Adaptation of a residual branch inside a transformer layer, where the
/// layer's own skip connection already carries the identity part of A:
///   sequential: B(x) + A_branch(B(x))   parallel: B(x) + A_branch(x)
/// With W_up = 0 this returns exactly B(x).
template <typename T>
Tensor<T> adapt_branch(const Tensor<T>& branch_out, const Tensor<T>& branch_in, const AdapterParams<T>& a,
                       AdapterType type);

/// Exact number of trainable adapter scalars for `layers` transformer layers.
std::size_t count_trainable_params(const std::optional<AdapterConfig>& config, std::size_t d_model,
                                   std::size_t layers);

/// All adapters of a model, registered in a ParameterStore under
/// "adapter.{layer}.{attn|ff}.{down|up|lambda}".
template <typename T>
class AdapterSet {
 public:
  struct Layer {
    std::optional<AdapterParams<T>> attn;
    std::optional<AdapterParams<T>> ff;
  };

  AdapterSet(const AdapterConfig& config, std::size_t d_model, std::size_t layers, ParameterStore<T>& store,
             std::mt19937_64& rng);

  const AdapterConfig& config() const { return config_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t size() const { return layers_.size(); }

 private:
  AdapterConfig config_;
  std::vector<Layer> layers_;
};

extern template class AdapterSet<float>;
extern template class AdapterSet<double>;

}  // namespace magma
