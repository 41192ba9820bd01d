#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "magma/adapters.hpp"
#include "magma/parameters.hpp"
#include "magma/tensor.hpp"
#include "magma/tokenizer.hpp"

namespace magma {

struct LmConfig {
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t vocab = Tokenizer::kByteVocab;
  std::size_t context = 512;
  bool bos = false;  // prepend BOS to caption / prompt text that follows an image

  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const LmConfig&) const = default;
};

/// Interleaved image-prefix and token segments forming one transformer input.
template <typename T>
class PromptSequence {
 public:
  struct Segment {
    bool is_prefix = false;
    Tensor<T> embeddings;  // [n × d_model] when is_prefix
    TokenSequence tokens;  // otherwise
    std::size_t length() const { return is_prefix ? embeddings.dim(0) : tokens.size(); }
  };

  PromptSequence& add_prefix(Tensor<T> embeddings);
  PromptSequence& add_tokens(TokenSequence tokens);

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t length() const;
  std::size_t image_count() const;

 private:
  std::vector<Segment> segments_;
};

/// Weights of one parallel transformer layer.
template <typename T>
struct BlockWeights {
  Tensor<T> norm_gain, norm_bias;
  Tensor<T> wq, wk, wv, wo;  // [d×d], bias-free
  Tensor<T> ff_in_w, ff_in_b;    // [4d×d], [4d]
  Tensor<T> ff_out_w, ff_out_b;  // [d×4d], [d]
};

/// GPT-J-style decoder: embedding E, parallel attention/feed-forward layers
/// with rotary positions, final layer norm and head H. All tensors are
/// registered under "lm.*".
template <typename T>
class LanguageModel {
 public:
  LanguageModel(const LmConfig& config, ParameterStore<T>& store, std::mt19937_64& rng);

  const LmConfig& config() const { return config_; }
  const BlockWeights<T>& block(std::size_t i) const { return blocks_.at(i); }
  const Tensor<T>& embedding() const { return embed_; }

  /// E(t) for each token, [m × d].
  Tensor<T> embed(std::span<const int> tokens) const;
  /// Concatenates all segments into one [len × d] input.
  Tensor<T> embed_prompt(const PromptSequence<T>& prompt) const;

  /// Attention branch of layer i on already-normalized input x.
  Tensor<T> attention(std::size_t i, const Tensor<T>& x, std::size_t batch) const;
  /// Feed-forward branch of layer i on already-normalized input x.
  Tensor<T> feed_forward(std::size_t i, const Tensor<T>& x) const;

  /// h + Attn(LN(h)) + FF(LN(h)) on [batch·seq × d], each branch adapted
  /// when adapters are given.
  Tensor<T> block_forward(std::size_t i, const Tensor<T>& h, std::size_t batch,
                          const AdapterSet<T>* adapters = nullptr) const;

  /// Adapted transformer stack followed by the final layer norm.
  Tensor<T> transform(const Tensor<T>& x, std::size_t batch, const AdapterSet<T>* adapters = nullptr) const;
  Tensor<T> head(const Tensor<T>& hidden) const;

  /// Per-position logits [len × V] for a single prompt.
  Tensor<T> lm_logits(const PromptSequence<T>& prompt, const AdapterSet<T>* adapters = nullptr) const;

  /// Greedy decoding. The returned tokens include the stop token when one is
  /// produced. Ties in the argmax go to the lowest id.
  TokenSequence generate_greedy(const PromptSequence<T>& prompt, const AdapterSet<T>* adapters, std::size_t max_new,
                                std::span<const int> stop_tokens) const;

 private:
  LmConfig config_;
  Tensor<T> embed_;
  std::vector<BlockWeights<T>> blocks_;
  Tensor<T> norm_gain_, norm_bias_;
  Tensor<T> head_w_, head_b_;
};

/// Index of the largest value; the lowest index wins ties.
template <typename T>
std::size_t argmax(std::span<const T> values);

/// Raw attention scores q·kᵀ/√d for [heads × m × d] inputs, no mask.
template <typename T>
std::vector<T> attention_scores(const Tensor<T>& q, const Tensor<T>& k);

extern template class PromptSequence<float>;
extern template class PromptSequence<double>;
extern template class LanguageModel<float>;
extern template class LanguageModel<double>;

}  // namespace magma
