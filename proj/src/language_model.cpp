#include "magma/language_model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "magma/ops.hpp"

namespace magma {

void LmConfig::validate() const {
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || vocab == 0 || context == 0)
    throw UsageError("language model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw UsageError(fmt::format("d_model {} is not divisible by n_heads {}", d_model, n_heads));
  if (head_dim() % 2 != 0) throw UsageError(fmt::format("head dimension {} must be even for rotary pairs", head_dim()));
  // Smaller vocabularies are allowed for raw-id models; make_tokenizer checks
  // that a text tokenizer fits.
  if (bos && vocab <= static_cast<std::size_t>(Tokenizer::kBos))
    throw UsageError(fmt::format("bos needs vocab > {}, got {}", Tokenizer::kBos, vocab));
}

template <typename T>
PromptSequence<T>& PromptSequence<T>::add_prefix(Tensor<T> embeddings) {
  if (embeddings.rank() != 2) throw ShapeError("prefix embeddings must be [n × d_model]");
  segments_.push_back(Segment{true, std::move(embeddings), {}});
  return *this;
}

template <typename T>
PromptSequence<T>& PromptSequence<T>::add_tokens(TokenSequence tokens) {
  if (!tokens.empty()) segments_.push_back(Segment{false, {}, std::move(tokens)});
  return *this;
}

template <typename T>
std::size_t PromptSequence<T>::length() const {
  std::size_t n = 0;
  for (const auto& s : segments_) n += s.length();
  return n;
}

template <typename T>
std::size_t PromptSequence<T>::image_count() const {
  return static_cast<std::size_t>(std::count_if(segments_.begin(), segments_.end(), [](const auto& s) { return s.is_prefix; }));
}

template <typename T>
LanguageModel<T>::LanguageModel(const LmConfig& config, ParameterStore<T>& store, std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model, V = config_.vocab;
  const double std_in = 0.02;
  const double std_out = 0.02 / std::sqrt(2.0 * static_cast<double>(config_.n_layers));
  auto reg = [&store](const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    return store.add(name, std::move(t));
  };
  embed_ = reg("lm.embed", normal_tensor<T>({V, d}, std_in, rng));
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    const auto p = fmt::format("lm.block{}.", i);
    BlockWeights<T> b;
    b.norm_gain = reg(p + "norm.gain", Tensor<T>::full({d}, T(1)));
    b.norm_bias = reg(p + "norm.bias", Tensor<T>::zeros({d}));
    b.wq = reg(p + "attn.q", normal_tensor<T>({d, d}, std_in, rng));
    b.wk = reg(p + "attn.k", normal_tensor<T>({d, d}, std_in, rng));
    b.wv = reg(p + "attn.v", normal_tensor<T>({d, d}, std_in, rng));
    b.wo = reg(p + "attn.o", normal_tensor<T>({d, d}, std_out, rng));
    b.ff_in_w = reg(p + "ff.in.weight", normal_tensor<T>({4 * d, d}, std_in, rng));
    b.ff_in_b = reg(p + "ff.in.bias", Tensor<T>::zeros({4 * d}));
    b.ff_out_w = reg(p + "ff.out.weight", normal_tensor<T>({d, 4 * d}, std_out, rng));
    b.ff_out_b = reg(p + "ff.out.bias", Tensor<T>::zeros({d}));
    blocks_.push_back(std::move(b));
  }
  norm_gain_ = reg("lm.norm_f.gain", Tensor<T>::full({d}, T(1)));
  norm_bias_ = reg("lm.norm_f.bias", Tensor<T>::zeros({d}));
  head_w_ = reg("lm.head.weight", normal_tensor<T>({V, d}, std_in, rng));
  head_b_ = reg("lm.head.bias", Tensor<T>::zeros({V}));
}

template <typename T>
Tensor<T> LanguageModel<T>::embed(std::span<const int> tokens) const {
  return ops::gather_rows(embed_, tokens);
}

template <typename T>
Tensor<T> LanguageModel<T>::embed_prompt(const PromptSequence<T>& prompt) const {
  std::vector<Tensor<T>> parts;
  for (const auto& seg : prompt.segments()) {
    if (seg.is_prefix) {
      if (seg.embeddings.dim(1) != config_.d_model)
        throw ShapeError(fmt::format("prefix width {} does not match d_model {}", seg.embeddings.dim(1), config_.d_model));
      parts.push_back(seg.embeddings);
    } else {
      parts.push_back(embed(seg.tokens));
    }
  }
  if (parts.empty()) throw ShapeError("empty prompt");
  return ops::concat_rows(parts);
}

template <typename T>
Tensor<T> LanguageModel<T>::attention(std::size_t i, const Tensor<T>& x, std::size_t batch) const {
  const auto& b = blocks_.at(i);
  const std::size_t rows = x.dim(0);
  const std::size_t seq = rows / batch;
  std::vector<int> positions(rows);
  for (std::size_t r = 0; r < rows; ++r) positions[r] = static_cast<int>(r % seq);
  auto q = ops::apply_rotary(ops::linear(x, b.wq), positions, config_.head_dim());
  auto k = ops::apply_rotary(ops::linear(x, b.wk), positions, config_.head_dim());
  auto v = ops::linear(x, b.wv);
  return ops::linear(ops::causal_attention(q, k, v, batch, config_.n_heads), b.wo);
}

template <typename T>
Tensor<T> LanguageModel<T>::feed_forward(std::size_t i, const Tensor<T>& x) const {
  const auto& b = blocks_.at(i);
  return ops::linear(ops::gelu(ops::linear(x, b.ff_in_w, b.ff_in_b)), b.ff_out_w, b.ff_out_b);
}

template <typename T>
Tensor<T> LanguageModel<T>::block_forward(std::size_t i, const Tensor<T>& h, std::size_t batch,
                                          const AdapterSet<T>* adapters) const {
  const auto& b = blocks_.at(i);
  auto x = ops::layer_norm(h, b.norm_gain, b.norm_bias);
  auto attn = attention(i, x, batch);
  auto ff = feed_forward(i, x);
  if (adapters) {
    const auto& layer = adapters->layer(i);
    const auto type = adapters->config().type;
    if (layer.attn) attn = adapt_branch(attn, x, *layer.attn, type);
    if (layer.ff) ff = adapt_branch(ff, x, *layer.ff, type);
  }
  return ops::add(ops::add(h, attn), ff);
}

template <typename T>
Tensor<T> LanguageModel<T>::transform(const Tensor<T>& x, std::size_t batch, const AdapterSet<T>* adapters) const {
  if (x.rank() != 2 || x.dim(1) != config_.d_model)
    throw ShapeError(fmt::format("transformer input {} is not [rows × {}]", shape_str(x.shape()), config_.d_model));
  if (batch == 0 || x.dim(0) % batch != 0) throw ShapeError("transformer rows not divisible by batch");
  if (x.dim(0) / batch > config_.context)
    throw ShapeError(fmt::format("sequence length {} exceeds context window {}", x.dim(0) / batch, config_.context));
  if (adapters && adapters->size() != config_.n_layers)
    throw ShapeError(fmt::format("{} adapter layers for {} transformer layers", adapters->size(), config_.n_layers));
  Tensor<T> h = x;
  for (std::size_t i = 0; i < config_.n_layers; ++i) h = block_forward(i, h, batch, adapters);
  return ops::layer_norm(h, norm_gain_, norm_bias_);
}

template <typename T>
Tensor<T> LanguageModel<T>::head(const Tensor<T>& hidden) const {
  return ops::linear(hidden, head_w_, head_b_);
}

template <typename T>
Tensor<T> LanguageModel<T>::lm_logits(const PromptSequence<T>& prompt, const AdapterSet<T>* adapters) const {
  if (prompt.length() > config_.context)
    throw ShapeError(fmt::format("prompt length {} exceeds context window {}", prompt.length(), config_.context));
  return head(transform(embed_prompt(prompt), 1, adapters));
}

template <typename T>
TokenSequence LanguageModel<T>::generate_greedy(const PromptSequence<T>& prompt, const AdapterSet<T>* adapters,
                                                std::size_t max_new, std::span<const int> stop_tokens) const {
  if (max_new == 0) throw UsageError("generate_greedy needs max_new >= 1");
  NoGradGuard no_grad;
  TokenSequence generated;
  for (std::size_t step = 0; step < max_new; ++step) {
    PromptSequence<T> current = prompt;
    current.add_tokens(generated);
    if (current.length() > config_.context)
      throw ShapeError(fmt::format("generation overflowed the context window of {}", config_.context));
    auto logits = lm_logits(current, adapters);
    const std::size_t V = logits.dim(1);
    auto last = logits.data().subspan((logits.dim(0) - 1) * V, V);
    const int next = static_cast<int>(argmax<T>(last));
    generated.push_back(next);
    if (std::find(stop_tokens.begin(), stop_tokens.end(), next) != stop_tokens.end()) break;
  }
  return generated;
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
  if (values.empty()) throw ShapeError("argmax of empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

template <typename T>
std::vector<T> attention_scores(const Tensor<T>& q, const Tensor<T>& k) {
  if (q.rank() != 3 || q.shape() != k.shape()) throw ShapeError("attention_scores expects matching [heads × m × d]");
  const std::size_t H = q.dim(0), m = q.dim(1), d = q.dim(2);
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  std::vector<T> out(H * m * m);
  auto qd = q.data(), kd = k.data();
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        T acc = 0;
        for (std::size_t e = 0; e < d; ++e) acc += qd[(h * m + i) * d + e] * kd[(h * m + j) * d + e];
        out[(h * m + i) * m + j] = acc * scale;
      }
  return out;
}

template class PromptSequence<float>;
template class PromptSequence<double>;
template class LanguageModel<float>;
template class LanguageModel<double>;
template std::size_t argmax<float>(std::span<const float>);
template std::size_t argmax<double>(std::span<const double>);
template std::vector<float> attention_scores(const Tensor<float>&, const Tensor<float>&);
template std::vector<double> attention_scores(const Tensor<double>&, const Tensor<double>&);

}  // namespace magma
