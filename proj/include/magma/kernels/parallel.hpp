#pragma once

// OpenMP kernels for the hot loops of the autodiff ops. Every kernel here has
// a naive serial twin in kernels/reference.hpp; tests compare the two and
// bench/ times them against each other.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace magma::kernels {

// Below this many multiply-adds a parallel region costs more than it saves.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

namespace detail {

// Register tile: kRows rows of c by 4 SIMD vectors of columns, accumulated
// over all of k before c is touched.
inline constexpr std::size_t kRows = 4;
template <typename T>
inline constexpr std::size_t kCols = 256 / sizeof(T);

template <typename T, std::size_t R>
inline void tile_full(const T* a, std::size_t k, const T* b, std::size_t n, T* c, bool accumulate) {
  constexpr std::size_t C = kCols<T>;
  T acc[R][C] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* bp = b + p * n;
    for (std::size_t r = 0; r < R; ++r) {
      const T ar = a[r * k + p];
#pragma omp simd
      for (std::size_t j = 0; j < C; ++j) acc[r][j] += ar * bp[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    T* cr = c + r * n;
    if (accumulate) {
#pragma omp simd
      for (std::size_t j = 0; j < C; ++j) cr[j] += acc[r][j];
    } else {
#pragma omp simd
      for (std::size_t j = 0; j < C; ++j) cr[j] = acc[r][j];
    }
  }
}

// Ragged edge: `rows` ≤ kRows, `cols` < kCols.
template <typename T>
inline void tile_edge(const T* a, std::size_t k, const T* b, std::size_t n, T* c, std::size_t rows, std::size_t cols,
                      bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* cr = c + r * n;
    if (!accumulate) std::fill(cr, cr + cols, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T ar = a[r * k + p];
      const T* bp = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < cols; ++j) cr[j] += ar * bp[j];
    }
  }
}

template <typename T>
inline void row_block(const T* a, std::size_t k, const T* b, std::size_t n, T* c, std::size_t rows,
                      bool accumulate) {
  constexpr std::size_t C = kCols<T>;
  std::size_t j = 0;
  for (; j + C <= n; j += C) {
    switch (rows) {
      case 4: tile_full<T, 4>(a, k, b + j, n, c + j, accumulate); break;
      case 3: tile_full<T, 3>(a, k, b + j, n, c + j, accumulate); break;
      case 2: tile_full<T, 2>(a, k, b + j, n, c + j, accumulate); break;
      default: tile_full<T, 1>(a, k, b + j, n, c + j, accumulate); break;
    }
  }
  if (j < n) tile_edge(a, k, b + j, n, c + j, rows, n - j, accumulate);
}

}  // namespace detail

/// c[m×n] (+)= a[m×k] · b[k×n]
template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  const long blocks = static_cast<long>((m + detail::kRows - 1) / detail::kRows);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelThreshold)
  for (long blk = 0; blk < blocks; ++blk) {
    const std::size_t i = static_cast<std::size_t>(blk) * detail::kRows;
    const std::size_t rows = std::min(detail::kRows, m - i);
    detail::row_block(a.data() + i * k, k, b.data(), n, c.data() + i * n, rows, accumulate);
  }
}

/// b[n×k] = aᵀ for a[k×n]
template <typename T>
void transpose(std::span<const T> a, std::span<T> b, std::size_t rows, std::size_t cols) {
  constexpr std::size_t tile = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += tile) {
    for (std::size_t j0 = 0; j0 < cols; j0 += tile) {
      const std::size_t i1 = std::min(rows, i0 + tile);
      const std::size_t j1 = std::min(cols, j0 + tile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) b[j * rows + i] = a[i * cols + j];
    }
  }
}

/// c[m×n] (+)= a[m×k] · b[n×k]ᵀ
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  std::vector<T> bt(k * n);
  transpose<T>(b, bt, n, k);
  matmul_nn<T>(a, bt, c, m, k, n, accumulate);
}

/// c[m×n] (+)= a[k×m]ᵀ · b[k×n]
template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  std::vector<T> at(m * k);
  transpose<T>(a, at, k, m);
  matmul_nn<T>(at, b, c, m, k, n, accumulate);
}

/// Shapes for the fused causal attention kernel. q/k/v/out are laid out as
/// [batch·seq × heads·head_dim]; probs as [batch × heads × seq × seq].
struct AttentionDims {
  std::size_t batch;
  std::size_t seq;
  std::size_t heads;
  std::size_t head_dim;
  std::size_t width() const { return heads * head_dim; }
};

template <typename T>
void causal_attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v, std::span<T> out,
                              std::span<T> probs, const AttentionDims& d) {
  const std::size_t W = d.width();
  const std::size_t S = d.seq;
  const T scale = T(1) / std::sqrt(static_cast<T>(d.head_dim));
  const long units = static_cast<long>(d.batch * d.heads);
#pragma omp parallel for schedule(static) if (d.batch * d.heads * S * S * d.head_dim > kParallelThreshold)
  for (long u = 0; u < units; ++u) {
    const std::size_t b = static_cast<std::size_t>(u) / d.heads;
    const std::size_t h = static_cast<std::size_t>(u) % d.heads;
    const std::size_t col = h * d.head_dim;
    T* P = probs.data() + static_cast<std::size_t>(u) * S * S;
    for (std::size_t t = 0; t < S; ++t) {
      const T* qt = q.data() + (b * S + t) * W + col;
      T* row = P + t * S;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t s = 0; s <= t; ++s) {
        const T* ks = k.data() + (b * S + s) * W + col;
        T acc = 0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t e = 0; e < d.head_dim; ++e) acc += qt[e] * ks[e];
        row[s] = acc * scale;
        mx = std::max(mx, row[s]);
      }
      T sum = 0;
      for (std::size_t s = 0; s <= t; ++s) {
        row[s] = std::exp(row[s] - mx);
        sum += row[s];
      }
      for (std::size_t s = 0; s <= t; ++s) row[s] /= sum;
      for (std::size_t s = t + 1; s < S; ++s) row[s] = T(0);

      T* ot = out.data() + (b * S + t) * W + col;
      std::fill(ot, ot + d.head_dim, T(0));
      for (std::size_t s = 0; s <= t; ++s) {
        const T p = row[s];
        const T* vs = v.data() + (b * S + s) * W + col;
#pragma omp simd
        for (std::size_t e = 0; e < d.head_dim; ++e) ot[e] += p * vs[e];
      }
    }
  }
}

/// Accumulates into dq/dk/dv (any of which may be empty to skip it).
template <typename T>
void causal_attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                               std::span<const T> probs, std::span<const T> dout, std::span<T> dq, std::span<T> dk,
                               std::span<T> dv, const AttentionDims& d) {
  const std::size_t W = d.width();
  const std::size_t S = d.seq;
  const T scale = T(1) / std::sqrt(static_cast<T>(d.head_dim));
  const long units = static_cast<long>(d.batch * d.heads);
#pragma omp parallel for schedule(static) if (d.batch * d.heads * S * S * d.head_dim > kParallelThreshold)
  for (long u = 0; u < units; ++u) {
    const std::size_t b = static_cast<std::size_t>(u) / d.heads;
    const std::size_t h = static_cast<std::size_t>(u) % d.heads;
    const std::size_t col = h * d.head_dim;
    const T* P = probs.data() + static_cast<std::size_t>(u) * S * S;
    std::vector<T> dscore(S);
    for (std::size_t t = 0; t < S; ++t) {
      const T* row = P + t * S;
      const T* go = dout.data() + (b * S + t) * W + col;
      T dot = 0;
      for (std::size_t s = 0; s <= t; ++s) {
        const T* vs = v.data() + (b * S + s) * W + col;
        T acc = 0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t e = 0; e < d.head_dim; ++e) acc += go[e] * vs[e];
        dscore[s] = acc;
        dot += acc * row[s];
        if (!dv.empty()) {
          T* dvs = dv.data() + (b * S + s) * W + col;
          const T p = row[s];
#pragma omp simd
          for (std::size_t e = 0; e < d.head_dim; ++e) dvs[e] += p * go[e];
        }
      }
      const T* qt = q.data() + (b * S + t) * W + col;
      T* dqt = dq.empty() ? nullptr : dq.data() + (b * S + t) * W + col;
      for (std::size_t s = 0; s <= t; ++s) {
        const T g = row[s] * (dscore[s] - dot) * scale;
        if (g == T(0)) continue;
        const T* ks = k.data() + (b * S + s) * W + col;
        if (dqt) {
#pragma omp simd
          for (std::size_t e = 0; e < d.head_dim; ++e) dqt[e] += g * ks[e];
        }
        if (!dk.empty()) {
          T* dks = dk.data() + (b * S + s) * W + col;
#pragma omp simd
          for (std::size_t e = 0; e < d.head_dim; ++e) dks[e] += g * qt[e];
        }
      }
    }
  }
}

/// Shapes for NHWC convolution with weights laid out [out × kh × kw × in].
struct ConvDims {
  std::size_t batch, height, width, in_channels;
  std::size_t out_channels, kernel, stride, pad;
  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

/// Patch matrix [batch·Ho·Wo × K·K·Ci]; out-of-image taps are zero.
template <typename T>
void im2col(std::span<const T> x, std::span<T> cols, const ConvDims& d) {
  const std::size_t Ho = d.out_height(), Wo = d.out_width(), K = d.kernel, Ci = d.in_channels;
  const std::size_t row_len = K * K * Ci;
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        T* row = cols.data() + ((b * Ho + oy) * Wo + ox) * row_len;
        for (std::size_t ky = 0; ky < K; ++ky) {
          const long iy = static_cast<long>(oy * d.stride + ky) - static_cast<long>(d.pad);
          for (std::size_t kx = 0; kx < K; ++kx) {
            const long ix = static_cast<long>(ox * d.stride + kx) - static_cast<long>(d.pad);
            T* dst = row + (ky * K + kx) * Ci;
            if (iy < 0 || iy >= static_cast<long>(d.height) || ix < 0 || ix >= static_cast<long>(d.width)) {
              std::fill(dst, dst + Ci, T(0));
            } else {
              const T* src = x.data() + ((b * d.height + static_cast<std::size_t>(iy)) * d.width +
                                         static_cast<std::size_t>(ix)) * Ci;
              std::copy(src, src + Ci, dst);
            }
          }
        }
      }
}

/// Adds each patch-matrix entry back onto the input position it came from.
template <typename T>
void col2im_add(std::span<const T> cols, std::span<T> dx, const ConvDims& d) {
  const std::size_t Ho = d.out_height(), Wo = d.out_width(), K = d.kernel, Ci = d.in_channels;
  const std::size_t row_len = K * K * Ci;
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const T* row = cols.data() + ((b * Ho + oy) * Wo + ox) * row_len;
        for (std::size_t ky = 0; ky < K; ++ky) {
          const long iy = static_cast<long>(oy * d.stride + ky) - static_cast<long>(d.pad);
          if (iy < 0 || iy >= static_cast<long>(d.height)) continue;
          for (std::size_t kx = 0; kx < K; ++kx) {
            const long ix = static_cast<long>(ox * d.stride + kx) - static_cast<long>(d.pad);
            if (ix < 0 || ix >= static_cast<long>(d.width)) continue;
            const T* src = row + (ky * K + kx) * Ci;
            T* dst = dx.data() + ((b * d.height + static_cast<std::size_t>(iy)) * d.width +
                                  static_cast<std::size_t>(ix)) * Ci;
#pragma omp simd
            for (std::size_t c = 0; c < Ci; ++c) dst[c] += src[c];
          }
        }
      }
}

/// NHWC convolution as patch matrix × weightsᵀ.
template <typename T>
void conv2d_forward(std::span<const T> x, std::span<const T> w, std::span<const T> bias, std::span<T> out,
                    const ConvDims& d) {
  const std::size_t rows = d.batch * d.out_height() * d.out_width();
  const std::size_t row_len = d.kernel * d.kernel * d.in_channels;
  std::vector<T> cols(rows * row_len);
  im2col<T>(x, cols, d);
  matmul_nt<T>(cols, w, out, rows, row_len, d.out_channels, false);
  if (bias.empty()) return;
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.data() + r * d.out_channels;
#pragma omp simd
    for (std::size_t c = 0; c < d.out_channels; ++c) o[c] += bias[c];
  }
}

/// Accumulates into dx/dw/dbias (any may be empty).
template <typename T>
void conv2d_backward(std::span<const T> x, std::span<const T> w, std::span<const T> dout, std::span<T> dx,
                     std::span<T> dw, std::span<T> dbias, const ConvDims& d) {
  const std::size_t rows = d.batch * d.out_height() * d.out_width();
  const std::size_t row_len = d.kernel * d.kernel * d.in_channels;
  const std::size_t Co = d.out_channels;
  if (!dbias.empty())
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < Co; ++c) dbias[c] += dout[r * Co + c];
  if (!dw.empty()) {
    std::vector<T> cols(rows * row_len);
    im2col<T>(x, cols, d);
    matmul_tn<T>(dout, cols, dw, Co, rows, row_len, true);
  }
  if (!dx.empty()) {
    std::vector<T> dcols(rows * row_len);
    matmul_nn<T>(dout, w, dcols, rows, Co, row_len, false);
    col2im_add<T>(dcols, dx, d);
  }
}

}  // namespace magma::kernels
