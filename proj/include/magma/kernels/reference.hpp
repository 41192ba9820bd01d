#pragma once

// Naive single-threaded versions of the kernels in parallel.hpp. Kept only as
// a correctness reference for tests and a baseline for the benchmarks.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "magma/kernels/parallel.hpp"

namespace magma::kernels::reference {

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

template <typename T>
void causal_attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v, std::span<T> out,
                              std::span<T> probs, const AttentionDims& d) {
  const std::size_t W = d.width(), S = d.seq, D = d.head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(D));
  auto at = [&](std::span<const T> x, std::size_t b, std::size_t t, std::size_t h, std::size_t e) {
    return x[(b * S + t) * W + h * D + e];
  };
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t h = 0; h < d.heads; ++h) {
      T* P = probs.data() + (b * d.heads + h) * S * S;
      for (std::size_t t = 0; t < S; ++t) {
        std::vector<T> score(S, -std::numeric_limits<T>::infinity());
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t s = 0; s <= t; ++s) {
          T acc = 0;
          for (std::size_t e = 0; e < D; ++e) acc += at(q, b, t, h, e) * at(k, b, s, h, e);
          score[s] = acc * scale;
          if (score[s] > mx) mx = score[s];
        }
        T sum = 0;
        for (std::size_t s = 0; s < S; ++s) {
          P[t * S + s] = s <= t ? std::exp(score[s] - mx) : T(0);
          sum += P[t * S + s];
        }
        for (std::size_t s = 0; s < S; ++s) P[t * S + s] /= sum;
        for (std::size_t e = 0; e < D; ++e) {
          T acc = 0;
          for (std::size_t s = 0; s < S; ++s) acc += P[t * S + s] * at(v, b, s, h, e);
          out[(b * S + t) * W + h * D + e] = acc;
        }
      }
    }
}

template <typename T>
void causal_attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                               std::span<const T> probs, std::span<const T> dout, std::span<T> dq, std::span<T> dk,
                               std::span<T> dv, const AttentionDims& d) {
  const std::size_t W = d.width(), S = d.seq, D = d.head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(D));
  auto idx = [&](std::size_t b, std::size_t t, std::size_t h, std::size_t e) { return (b * S + t) * W + h * D + e; };
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t h = 0; h < d.heads; ++h) {
      const T* P = probs.data() + (b * d.heads + h) * S * S;
      for (std::size_t t = 0; t < S; ++t) {
        std::vector<T> dp(S, T(0));
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t e = 0; e < D; ++e) dp[s] += dout[idx(b, t, h, e)] * v[idx(b, s, h, e)];
        T dot = 0;
        for (std::size_t s = 0; s < S; ++s) dot += dp[s] * P[t * S + s];
        for (std::size_t s = 0; s < S; ++s) {
          const T g = P[t * S + s] * (dp[s] - dot) * scale;
          for (std::size_t e = 0; e < D; ++e) {
            if (!dq.empty()) dq[idx(b, t, h, e)] += g * k[idx(b, s, h, e)];
            if (!dk.empty()) dk[idx(b, s, h, e)] += g * q[idx(b, t, h, e)];
            if (!dv.empty()) dv[idx(b, s, h, e)] += P[t * S + s] * dout[idx(b, t, h, e)];
          }
        }
      }
    }
}

template <typename T>
void conv2d_forward(std::span<const T> x, std::span<const T> w, std::span<const T> bias, std::span<T> out,
                    const ConvDims& d) {
  const std::size_t Ho = d.out_height(), Wo = d.out_width();
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox)
        for (std::size_t co = 0; co < d.out_channels; ++co) {
          T acc = bias.empty() ? T(0) : bias[co];
          for (std::size_t ky = 0; ky < d.kernel; ++ky)
            for (std::size_t kx = 0; kx < d.kernel; ++kx) {
              long iy = static_cast<long>(oy * d.stride + ky) - static_cast<long>(d.pad);
              long ix = static_cast<long>(ox * d.stride + kx) - static_cast<long>(d.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(d.height) || ix >= static_cast<long>(d.width)) continue;
              for (std::size_t ci = 0; ci < d.in_channels; ++ci)
                acc += w[((co * d.kernel + ky) * d.kernel + kx) * d.in_channels + ci] *
                       x[((b * d.height + static_cast<std::size_t>(iy)) * d.width + static_cast<std::size_t>(ix)) *
                             d.in_channels +
                         ci];
            }
          out[((b * Ho + oy) * Wo + ox) * d.out_channels + co] = acc;
        }
}

}  // namespace magma::kernels::reference
