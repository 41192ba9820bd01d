#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "magma/kernels/parallel.hpp"
#include "magma/kernels/reference.hpp"

namespace magma::kernels {
namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return v;
}

template <typename T>
void expect_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "index " << i;
}

struct MatShape {
  std::size_t m, k, n;
};

// Shapes straddling the 4-row tile and the SIMD column width on both sides.
const std::vector<MatShape> kShapes{{1, 1, 1},   {3, 5, 7},    {4, 8, 64},   {5, 17, 65},   {7, 3, 33},
                                    {9, 64, 31}, {13, 29, 97}, {64, 64, 64}, {33, 130, 129}, {100, 7, 260}};

TEST(KernelMatmul, NnMatchesReference) {
  std::mt19937_64 rng(1);
  for (const auto& s : kShapes)
    for (bool acc : {false, true}) {
      const auto a = random_vec<double>(s.m * s.k, rng), b = random_vec<double>(s.k * s.n, rng);
      auto c1 = random_vec<double>(s.m * s.n, rng);
      auto c2 = c1;
      matmul_nn<double>(a, b, c1, s.m, s.k, s.n, acc);
      reference::matmul_nn<double>(a, b, c2, s.m, s.k, s.n, acc);
      expect_close(c1, c2, 1e-12);
    }
}

TEST(KernelMatmul, NtMatchesReference) {
  std::mt19937_64 rng(2);
  for (const auto& s : kShapes)
    for (bool acc : {false, true}) {
      const auto a = random_vec<double>(s.m * s.k, rng), b = random_vec<double>(s.n * s.k, rng);
      auto c1 = random_vec<double>(s.m * s.n, rng);
      auto c2 = c1;
      matmul_nt<double>(a, b, c1, s.m, s.k, s.n, acc);
      reference::matmul_nt<double>(a, b, c2, s.m, s.k, s.n, acc);
      expect_close(c1, c2, 1e-12);
    }
}

TEST(KernelMatmul, TnMatchesReference) {
  std::mt19937_64 rng(3);
  for (const auto& s : kShapes)
    for (bool acc : {false, true}) {
      const auto a = random_vec<double>(s.k * s.m, rng), b = random_vec<double>(s.k * s.n, rng);
      auto c1 = random_vec<double>(s.m * s.n, rng);
      auto c2 = c1;
      matmul_tn<double>(a, b, c1, s.m, s.k, s.n, acc);
      reference::matmul_tn<double>(a, b, c2, s.m, s.k, s.n, acc);
      expect_close(c1, c2, 1e-12);
    }
}

TEST(KernelMatmul, FloatLargeShape) {
  std::mt19937_64 rng(4);
  const std::size_t m = 61, k = 128, n = 131;
  const auto a = random_vec<float>(m * k, rng), b = random_vec<float>(k * n, rng);
  std::vector<float> c1(m * n), c2(m * n);
  matmul_nn<float>(a, b, c1, m, k, n, false);
  reference::matmul_nn<float>(a, b, c2, m, k, n, false);
  expect_close(c1, c2, 1e-4);
}

TEST(KernelTranspose, SwapsAxes) {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  std::vector<double> t(6);
  transpose<double>(a, t, 2, 3);
  EXPECT_EQ(t, (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

TEST(KernelAttention, ForwardAndBackwardMatchReference) {
  std::mt19937_64 rng(5);
  for (const AttentionDims d : {AttentionDims{1, 1, 1, 2}, AttentionDims{2, 5, 2, 4}, AttentionDims{3, 17, 4, 8}}) {
    const std::size_t rows = d.batch * d.seq, W = d.width(), P = d.batch * d.heads * d.seq * d.seq;
    const auto q = random_vec<double>(rows * W, rng), k = random_vec<double>(rows * W, rng),
               v = random_vec<double>(rows * W, rng), dout = random_vec<double>(rows * W, rng);
    std::vector<double> o1(rows * W), o2(rows * W), p1(P), p2(P);
    causal_attention_forward<double>(q, k, v, o1, p1, d);
    reference::causal_attention_forward<double>(q, k, v, o2, p2, d);
    expect_close(o1, o2, 1e-12);
    expect_close(p1, p2, 1e-12);

    std::vector<double> dq1(rows * W), dk1(rows * W), dv1(rows * W);
    auto dq2 = dq1, dk2 = dk1, dv2 = dv1;
    causal_attention_backward<double>(q, k, v, p1, dout, dq1, dk1, dv1, d);
    reference::causal_attention_backward<double>(q, k, v, p2, dout, dq2, dk2, dv2, d);
    expect_close(dq1, dq2, 1e-12);
    expect_close(dk1, dk2, 1e-12);
    expect_close(dv1, dv2, 1e-12);
  }
}

TEST(KernelAttention, FutureProbabilitiesAreZero) {
  std::mt19937_64 rng(6);
  const AttentionDims d{1, 6, 1, 4};
  const auto q = random_vec<double>(24, rng), k = random_vec<double>(24, rng), v = random_vec<double>(24, rng);
  std::vector<double> out(24), probs(36);
  causal_attention_forward<double>(q, k, v, out, probs, d);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t s = t + 1; s < 6; ++s) EXPECT_EQ(probs[t * 6 + s], 0.0);
}

const std::vector<ConvDims> kConvs{{1, 4, 4, 1, 1, 3, 1, 1}, {2, 5, 5, 2, 3, 3, 2, 1}, {2, 8, 8, 3, 4, 3, 2, 1},
                                   {1, 7, 6, 2, 2, 1, 1, 0}, {1, 9, 9, 2, 5, 3, 3, 0}};

TEST(KernelConv, ForwardMatchesReference) {
  std::mt19937_64 rng(7);
  for (const auto& d : kConvs) {
    const auto x = random_vec<double>(d.batch * d.height * d.width * d.in_channels, rng);
    const auto w = random_vec<double>(d.out_channels * d.kernel * d.kernel * d.in_channels, rng);
    const auto b = random_vec<double>(d.out_channels, rng);
    const std::size_t n = d.batch * d.out_height() * d.out_width() * d.out_channels;
    std::vector<double> o1(n), o2(n);
    conv2d_forward<double>(x, w, b, o1, d);
    reference::conv2d_forward<double>(x, w, b, o2, d);
    expect_close(o1, o2, 1e-12);
  }
}

// The backward kernel is checked against the adjoint of the reference
// forward: ∂⟨dout, conv(x, w)⟩/∂x_i = ⟨dout, conv(e_i, w)⟩, likewise for w.
TEST(KernelConv, BackwardIsAdjointOfReferenceForward) {
  std::mt19937_64 rng(8);
  for (const auto& d : kConvs) {
    const std::size_t nx = d.batch * d.height * d.width * d.in_channels;
    const std::size_t nw = d.out_channels * d.kernel * d.kernel * d.in_channels;
    const std::size_t no = d.batch * d.out_height() * d.out_width() * d.out_channels;
    const auto x = random_vec<double>(nx, rng), w = random_vec<double>(nw, rng), dout = random_vec<double>(no, rng);
    std::vector<double> dx(nx), dw(nw), db(d.out_channels);
    conv2d_backward<double>(x, w, dout, dx, dw, db, d);

    auto inner = [&](const std::vector<double>& xx, const std::vector<double>& ww) {
      std::vector<double> out(no);
      reference::conv2d_forward<double>(xx, ww, {}, out, d);
      double s = 0;
      for (std::size_t i = 0; i < no; ++i) s += out[i] * dout[i];
      return s;
    };
    for (std::size_t i = 0; i < nx; ++i) {
      std::vector<double> e(nx, 0.0);
      e[i] = 1;
      ASSERT_NEAR(dx[i], inner(e, w), 1e-12);
    }
    for (std::size_t i = 0; i < nw; ++i) {
      std::vector<double> e(nw, 0.0);
      e[i] = 1;
      ASSERT_NEAR(dw[i], inner(x, e), 1e-12);
    }
    for (std::size_t c = 0; c < d.out_channels; ++c) {
      double s = 0;
      for (std::size_t r = 0; r < no / d.out_channels; ++r) s += dout[r * d.out_channels + c];
      EXPECT_NEAR(db[c], s, 1e-12);
    }
  }
}

TEST(KernelConv, Im2colRoundTripCountsOverlaps) {
  // col2im(im2col(ones)) counts how many patches cover each pixel.
  const ConvDims d{1, 4, 4, 1, 1, 3, 1, 1};
  std::vector<double> x(16, 1.0), cols(16 * 9), back(16, 0.0);
  im2col<double>(x, cols, d);
  col2im_add<double>(cols, back, d);
  EXPECT_EQ(back[0], 4.0);   // corner: 2×2 patches
  EXPECT_EQ(back[1], 6.0);   // edge: 2×3
  EXPECT_EQ(back[5], 9.0);   // interior: 3×3
}

}  // namespace
}  // namespace magma::kernels
