#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "magma/tensor.hpp"

// Differentiable tensor ops. Each op checks its output is finite and, when
// grad recording is enabled and an input requires grad, records a backward
// rule. Gradients are only ever accumulated into inputs with requires_grad.
namespace magma::ops {

/// a[m×k] · b[k×n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[..×in] · weightᵀ + bias, weight laid out [out×in]. bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise product of equal shapes.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor);

/// x multiplied by a one-element tensor (differentiable in both).
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// tanh approximation, as used in GPT-style feed-forward layers.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// Shift-stable softmax along `axis` (negative counts from the end).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1);

/// Normalizes over the last dimension then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps = 1e-5);

inline constexpr int kIgnoreTarget = -1;

/// Weighted negative log-likelihood of `targets` under softmax(logits).
/// Rows whose target is kIgnoreTarget contribute nothing. With empty
/// `weights` the result is the mean over the non-ignored rows.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, std::span<const T> weights = {});

/// Per-row −log softmax(logits)[target] without recording a graph; ignored
/// rows yield 0.
template <typename T>
std::vector<double> token_nll(const Tensor<T>& logits, std::span<const int> targets);

/// Rows of a 2-D table picked by index (embedding lookup).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> indices);

/// Concatenation along axis 0; trailing extents must agree.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// [B×S×C] → [B×C] average over the middle axis.
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x);

/// Inverted dropout: in training keeps each element with probability 1−p and
/// scales survivors by 1/(1−p); identity when `train` is false.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, std::mt19937_64& rng);

/// Rotates consecutive coordinate pairs (2j, 2j+1) of every head_dim-wide
/// chunk of the last axis by angle pos·10000^(−2j/head_dim). The
/// second-to-last axis indexes `positions`; leading axes broadcast.
template <typename T>
Tensor<T> apply_rotary(const Tensor<T>& x, std::span<const int> positions, std::size_t head_dim);

/// Multi-head causal attention on [batch·seq × heads·head_dim] inputs.
template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t batch,
                           std::size_t heads);

/// NHWC convolution: x[B×H×W×Cin], weight[Cout×K×K×Cin], bias[Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);

}  // namespace magma::ops
