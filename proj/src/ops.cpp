#include "magma/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include <fmt/format.h>

#include "magma/kernels/parallel.hpp"

namespace magma::ops {

namespace {

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
void check_finite(const char* op, std::span<const T> values) {
  // v·0 is NaN exactly for NaN and ±inf, and the sum stays NaN; this form
  // vectorizes where an early-exit loop does not.
  T probe = 0;
#pragma omp simd reduction(+ : probe)
  for (std::size_t i = 0; i < values.size(); ++i) probe += values[i] * T(0);
  if (probe != probe) throw NumericError(fmt::format("non-finite value produced by {}", op));
}

// Wraps freshly computed values as an op result and wires up the backward
// rule when any input participates in the graph.
template <typename T, typename Backward>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                      Backward&& backward_rule) {
  check_finite<T>(op, values);
  Tensor<T> out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.op = op;
  for (const auto& in : inputs) {
    if (in.requires_grad()) node.parents.push_back(in.node());
  }
  node.backward = std::forward<Backward>(backward_rule);
  return out;
}

template <typename T>
std::span<T> grad_of(const std::shared_ptr<NodeT<T>>& n) {
  if (!n || !n->requires_grad) return {};
  return n->grad_buffer();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  require(a >= 0 && a < r, fmt::format("axis {} out of range for rank {}", axis, rank));
  return static_cast<std::size_t>(a);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul expects 2-D operands");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, fmt::format("matmul inner dimensions disagree: {} vs {}", shape_str(a.shape()),
                                     shape_str(b.shape())));
  std::vector<T> out(m * n);
  kernels::matmul_nn<T>(a.data(), b.data(), out, m, k, n, false);
  auto an = a.node(), bn = b.node();
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](NodeT<T>& self) {
    if (auto da = grad_of(an); !da.empty()) kernels::matmul_nt<T>(self.grad, bn->data, da, m, n, k, true);
    if (auto db = grad_of(bn); !db.empty()) kernels::matmul_tn<T>(an->data, self.grad, db, k, m, n, true);
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(weight.rank() == 2, "linear weight must be 2-D");
  const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
  require(x.rank() >= 1 && x.dim(-1) == in_f,
          fmt::format("linear: input {} does not match weight {}", shape_str(x.shape()), shape_str(weight.shape())));
  if (bias.defined()) require(bias.numel() == out_f, "linear: bias size mismatch");
  const std::size_t rows = x.numel() / in_f;
  std::vector<T> out(rows * out_f);
  kernels::matmul_nt<T>(x.data(), weight.data(), out, rows, in_f, out_f, false);
  if (bias.defined()) {
    auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_f; ++j) out[r * out_f + j] += bd[j];
  }
  Shape shape = x.shape();
  shape.back() = out_f;
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  auto rule = [xn, wn, bn, rows, in_f, out_f](NodeT<T>& self) {
    if (auto dx = grad_of(xn); !dx.empty()) kernels::matmul_nn<T>(self.grad, wn->data, dx, rows, out_f, in_f, true);
    if (auto dw = grad_of(wn); !dw.empty()) kernels::matmul_tn<T>(self.grad, xn->data, dw, out_f, rows, in_f, true);
    if (auto db = grad_of(bn); !db.empty()) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_f; ++j) db[j] += self.grad[r * out_f + j];
    }
  };
  if (bias.defined()) return make_result<T>("linear", std::move(shape), std::move(out), {x, weight, bias}, rule);
  return make_result<T>("linear", std::move(shape), std::move(out), {x, weight}, rule);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), fmt::format("add: shapes {} and {} differ", shape_str(a.shape()), shape_str(b.shape())));
  std::vector<T> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [an, bn](NodeT<T>& self) {
    if (auto da = grad_of(an); !da.empty()) an->accumulate(self.grad);
    if (auto db = grad_of(bn); !db.empty()) bn->accumulate(self.grad);
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), fmt::format("mul: shapes {} and {} differ", shape_str(a.shape()), shape_str(b.shape())));
  std::vector<T> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [an, bn](NodeT<T>& self) {
    if (auto da = grad_of(an); !da.empty())
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * bn->data[i];
    if (auto db = grad_of(bn); !db.empty())
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += self.grad[i] * an->data[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= f;
  auto xn = x.node();
  return make_result<T>("scale", x.shape(), std::move(out), {x}, [xn, f](NodeT<T>& self) {
    auto dx = grad_of(xn);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += f * self.grad[i];
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s) {
  require(s.numel() == 1, "mul_scalar: factor must have exactly one element");
  const T f = s.item();
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= f;
  auto xn = x.node(), sn = s.node();
  return make_result<T>("mul_scalar", x.shape(), std::move(out), {x, s}, [xn, sn](NodeT<T>& self) {
    const T f = sn->data[0];
    if (auto dx = grad_of(xn); !dx.empty())
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += f * self.grad[i];
    if (auto ds = grad_of(sn); !ds.empty()) {
      T acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xn->data[i];
      ds[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  auto xn = x.node();
  return make_result<T>("relu", x.shape(), std::move(out), {x}, [xn](NodeT<T>& self) {
    auto dx = grad_of(xn);
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xn->data[i] > T(0)) dx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  std::vector<T> out(x.numel());
  auto th = std::make_shared<std::vector<T>>(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xd[i];
    (*th)[i] = std::tanh(c * (v + a * v * v * v));
    out[i] = T(0.5) * v * (T(1) + (*th)[i]);
  }
  auto xn = x.node();
  return make_result<T>("gelu", x.shape(), std::move(out), {x}, [xn, th](NodeT<T>& self) {
    auto dx = grad_of(xn);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T v = xn->data[i];
      const T t = (*th)[i];
      const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      dx[i] += self.grad[i] * d;
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  auto xd = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xd[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        out[base + j * inner] = std::exp(xd[base + j * inner] - mx);
        total += out[base + j * inner];
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  auto xn = x.node();
  return make_result<T>("softmax", s, std::move(out), {x}, [xn, outer, inner, len](NodeT<T>& self) {
    auto dx = grad_of(xn);
    const auto& y = self.data;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t i = base + j * inner;
          dx[i] += y[i] * (self.grad[i] - dot);
        }
      }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps) {
  const std::size_t d = x.dim(-1);
  require(gain.numel() == d && bias.numel() == d, "layer_norm: gain/bias must match the last dimension");
  const std::size_t rows = x.numel() / d;
  auto xd = x.data(), gd = gain.data(), bd = bias.data();
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_result<T>("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                        [xn, gn, bn, xhat, rstd, rows, d](NodeT<T>& self) {
                          auto dx = grad_of(xn), dg = grad_of(gn), db = grad_of(bn);
                          const auto& g = self.grad;
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* h = xhat->data() + r * d;
                            const T* gr = g.data() + r * d;
                            if (!dg.empty())
                              for (std::size_t j = 0; j < d; ++j) dg[j] += gr[j] * h[j];
                            if (!db.empty())
                              for (std::size_t j = 0; j < d; ++j) db[j] += gr[j];
                            if (dx.empty()) continue;
                            T mean_dh = 0, mean_dh_h = 0;
                            for (std::size_t j = 0; j < d; ++j) {
                              const T dh = gr[j] * gn->data[j];
                              mean_dh += dh;
                              mean_dh_h += dh * h[j];
                            }
                            mean_dh /= static_cast<T>(d);
                            mean_dh_h /= static_cast<T>(d);
                            for (std::size_t j = 0; j < d; ++j) {
                              const T dh = gr[j] * gn->data[j];
                              dx[r * d + j] += (*rstd)[r] * (dh - mean_dh - h[j] * mean_dh_h);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, std::span<const T> weights) {
  require(logits.rank() == 2, "cross_entropy expects [rows × vocab] logits");
  const std::size_t m = logits.dim(0), V = logits.dim(1);
  require(targets.size() == m, fmt::format("cross_entropy: {} targets for {} rows", targets.size(), m));
  require(weights.empty() || weights.size() == m, "cross_entropy: weight count mismatch");
  std::size_t counted = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] == kIgnoreTarget) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V)
      throw ShapeError(fmt::format("cross_entropy: target {} out of range [0, {})", targets[i], V));
    ++counted;
  }
  require(counted > 0, "cross_entropy: every target is ignored");
  auto w = std::make_shared<std::vector<T>>(m, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] == kIgnoreTarget) continue;
    (*w)[i] = weights.empty() ? T(1) / static_cast<T>(counted) : weights[i];
  }
  auto probs = std::make_shared<std::vector<T>>(m * V);
  auto ld = logits.data();
  T loss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = ld.data() + i * V;
    T mx = *std::max_element(row, row + V);
    T total = 0;
    for (std::size_t j = 0; j < V; ++j) {
      (*probs)[i * V + j] = std::exp(row[j] - mx);
      total += (*probs)[i * V + j];
    }
    for (std::size_t j = 0; j < V; ++j) (*probs)[i * V + j] /= total;
    if (targets[i] == kIgnoreTarget) continue;
    const T lse = mx + std::log(total);
    loss += (*w)[i] * (lse - row[targets[i]]);
  }
  std::vector<int> tg(targets.begin(), targets.end());
  auto ln = logits.node();
  return make_result<T>("cross_entropy", {1}, {loss}, {logits},
                        [ln, probs, w, tg = std::move(tg), m, V](NodeT<T>& self) {
                          auto dl = grad_of(ln);
                          const T g = self.grad[0];
                          for (std::size_t i = 0; i < m; ++i) {
                            if (tg[i] == kIgnoreTarget) continue;
                            const T wi = g * (*w)[i];
                            for (std::size_t j = 0; j < V; ++j) dl[i * V + j] += wi * (*probs)[i * V + j];
                            dl[i * V + static_cast<std::size_t>(tg[i])] -= wi;
                          }
                        });
}

template <typename T>
std::vector<double> token_nll(const Tensor<T>& logits, std::span<const int> targets) {
  require(logits.rank() == 2 && targets.size() == logits.dim(0), "token_nll: target count mismatch");
  const std::size_t V = logits.dim(1);
  std::vector<double> out(targets.size(), 0.0);
  auto ld = logits.data();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == kIgnoreTarget) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V)
      throw ShapeError(fmt::format("token_nll: target {} out of range [0, {})", targets[i], V));
    const T* row = ld.data() + i * V;
    double mx = *std::max_element(row, row + V);
    double total = 0;
    for (std::size_t j = 0; j < V; ++j) total += std::exp(static_cast<double>(row[j]) - mx);
    out[i] = mx + std::log(total) - static_cast<double>(row[targets[i]]);
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> indices) {
  require(table.rank() == 2, "gather_rows expects a 2-D table");
  require(!indices.empty(), "gather_rows: no indices");
  const std::size_t n = table.dim(0), d = table.dim(1);
  std::vector<T> out(indices.size() * d);
  auto td = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= n)
      throw ShapeError(fmt::format("gather_rows: index {} out of range [0, {})", indices[i], n));
    std::copy_n(td.data() + static_cast<std::size_t>(indices[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  auto tn = table.node();
  return make_result<T>("gather_rows", {indices.size(), d}, std::move(out), {table},
                        [tn, idx = std::move(idx), d](NodeT<T>& self) {
                          auto dt = grad_of(tn);
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            T* dst = dt.data() + static_cast<std::size_t>(idx[i]) * d;
                            const T* src = self.grad.data() + i * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.rank() >= 1 && Shape(p.shape().begin() + 1, p.shape().end()) == tail,
            fmt::format("concat_rows: {} does not match trailing extents {}", shape_str(p.shape()), shape_str(tail)));
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * shape_numel(tail));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());

  check_finite<T>("concat_rows", out);
  Tensor<T> result(std::move(shape), std::move(out));
  if (!grad_enabled()) return result;
  std::vector<std::shared_ptr<NodeT<T>>> nodes;
  bool any = false;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    any = any || p.requires_grad();
  }
  if (!any) return result;
  auto& node = *result.node();
  node.requires_grad = true;
  node.op = "concat_rows";
  for (const auto& n : nodes)
    if (n->requires_grad) node.parents.push_back(n);
  node.backward = [nodes](NodeT<T>& self) {
    std::size_t offset = 0;
    for (const auto& n : nodes) {
      const std::size_t len = n->data.size();
      if (n->requires_grad) n->accumulate(std::span<const T>(self.grad).subspan(offset, len));
      offset += len;
    }
  };
  return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          fmt::format("reshape: cannot view {} as {}", shape_str(x.shape()), shape_str(shape)));
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return make_result<T>("reshape", std::move(shape), std::move(out), {x},
                        [xn](NodeT<T>& self) { xn->accumulate(self.grad); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  auto xn = x.node();
  return make_result<T>("sum", {1}, {total}, {x}, [xn](NodeT<T>& self) {
    auto dx = grad_of(xn);
    for (auto& v : dx) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x) {
  require(x.rank() == 3, "mean_pool expects [batch × positions × channels]");
  const std::size_t B = x.dim(0), S = x.dim(1), C = x.dim(2);
  std::vector<T> out(B * C, T(0));
  auto xd = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t c = 0; c < C; ++c) out[b * C + c] += xd[(b * S + s) * C + c];
  for (auto& v : out) v /= static_cast<T>(S);
  auto xn = x.node();
  return make_result<T>("mean_pool", {B, C}, std::move(out), {x}, [xn, B, S, C](NodeT<T>& self) {
    auto dx = grad_of(xn);
    const T inv = T(1) / static_cast<T>(S);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t c = 0; c < C; ++c) dx[(b * S + s) * C + c] += self.grad[b * C + c] * inv;
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw UsageError(fmt::format("dropout probability {} outside [0, 1)", p));
  if (!train || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::bernoulli_distribution drop(p);
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  for (auto& m : *mask) m = drop(rng) ? T(0) : keep_scale;
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * (*mask)[i];
  auto xn = x.node();
  return make_result<T>("dropout", x.shape(), std::move(out), {x}, [xn, mask](NodeT<T>& self) {
    auto dx = grad_of(xn);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * (*mask)[i];
  });
}

template <typename T>
Tensor<T> apply_rotary(const Tensor<T>& x, std::span<const int> positions, std::size_t head_dim) {
  if (head_dim == 0 || head_dim % 2 != 0)
    throw ShapeError(fmt::format("apply_rotary: head dimension {} must be even", head_dim));
  require(x.rank() >= 2, "apply_rotary expects at least [positions × features]");
  const std::size_t D = x.dim(-1), m = x.dim(-2);
  require(D % head_dim == 0, fmt::format("apply_rotary: width {} is not a multiple of head dimension {}", D, head_dim));
  require(positions.size() == m, fmt::format("apply_rotary: {} positions for {} rows", positions.size(), m));
  const std::size_t half = head_dim / 2;
  auto cosv = std::make_shared<std::vector<T>>(m * half);
  auto sinv = std::make_shared<std::vector<T>>(m * half);
  for (std::size_t t = 0; t < m; ++t)
    for (std::size_t j = 0; j < half; ++j) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(positions[t]) * freq;
      (*cosv)[t * half + j] = static_cast<T>(std::cos(angle));
      (*sinv)[t * half + j] = static_cast<T>(std::sin(angle));
    }
  const std::size_t rows = x.numel() / D;
  auto rotate = [=](std::span<const T> in, std::span<T> out, bool inverse) {
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t t = r % m;
      for (std::size_t c = 0; c < D; c += head_dim)
        for (std::size_t j = 0; j < half; ++j) {
          const T cs = (*cosv)[t * half + j];
          const T sn = inverse ? -(*sinv)[t * half + j] : (*sinv)[t * half + j];
          const std::size_t i0 = r * D + c + 2 * j;
          const T x0 = in[i0], x1 = in[i0 + 1];
          out[i0] += x0 * cs - x1 * sn;
          out[i0 + 1] += x0 * sn + x1 * cs;
        }
    }
  };
  std::vector<T> out(x.numel(), T(0));
  rotate(x.data(), out, false);
  auto xn = x.node();
  return make_result<T>("apply_rotary", x.shape(), std::move(out), {x},
                        [xn, rotate](NodeT<T>& self) { rotate(self.grad, grad_of(xn), true); });
}

template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t batch,
                           std::size_t heads) {
  require(q.rank() == 2 && q.shape() == k.shape() && q.shape() == v.shape(),
          "causal_attention: q, k, v must share one 2-D shape");
  const std::size_t rows = q.dim(0), W = q.dim(1);
  require(batch > 0 && rows % batch == 0, fmt::format("causal_attention: {} rows not divisible by batch {}", rows, batch));
  require(heads > 0 && W % heads == 0, fmt::format("causal_attention: width {} not divisible by {} heads", W, heads));
  const kernels::AttentionDims dims{batch, rows / batch, heads, W / heads};
  auto probs = std::make_shared<std::vector<T>>(batch * heads * dims.seq * dims.seq);
  std::vector<T> out(q.numel());
  kernels::causal_attention_forward<T>(q.data(), k.data(), v.data(), out, *probs, dims);
  auto qn = q.node(), kn = k.node(), vn = v.node();
  return make_result<T>("causal_attention", q.shape(), std::move(out), {q, k, v},
                        [qn, kn, vn, probs, dims](NodeT<T>& self) {
                          kernels::causal_attention_backward<T>(qn->data, kn->data, vn->data, *probs, self.grad,
                                                                grad_of(qn), grad_of(kn), grad_of(vn), dims);
                        });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  require(x.rank() == 4, "conv2d expects NHWC input");
  require(weight.rank() == 4 && weight.dim(1) == weight.dim(2), "conv2d expects [out × k × k × in] weights");
  require(weight.dim(3) == x.dim(3), fmt::format("conv2d: input has {} channels, weights expect {}", x.dim(3), weight.dim(3)));
  require(stride > 0, "conv2d: stride must be positive");
  const kernels::ConvDims dims{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(1), stride, pad};
  require(dims.height + 2 * pad >= dims.kernel && dims.width + 2 * pad >= dims.kernel, "conv2d: kernel larger than input");
  if (bias.defined()) require(bias.numel() == dims.out_channels, "conv2d: bias size mismatch");
  std::vector<T> out(dims.batch * dims.out_height() * dims.out_width() * dims.out_channels);
  kernels::conv2d_forward<T>(x.data(), weight.data(), bias.defined() ? bias.data() : std::span<const T>{}, out, dims);
  Shape shape{dims.batch, dims.out_height(), dims.out_width(), dims.out_channels};
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  auto rule = [xn, wn, bn, dims](NodeT<T>& self) {
    kernels::conv2d_backward<T>(xn->data, wn->data, self.grad, grad_of(xn), grad_of(wn), grad_of(bn), dims);
  };
  if (bias.defined()) return make_result<T>("conv2d", std::move(shape), std::move(out), {x, weight, bias}, rule);
  return make_result<T>("conv2d", std::move(shape), std::move(out), {x, weight}, rule);
}

#define MAGMA_INSTANTIATE_OPS(T)                                                                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> scale(const Tensor<T>&, double);                                                       \
  template Tensor<T> mul_scalar(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> relu(const Tensor<T>&);                                                                \
  template Tensor<T> gelu(const Tensor<T>&);                                                                \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                        \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);              \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>, std::span<const T>);             \
  template std::vector<double> token_nll(const Tensor<T>&, std::span<const int>);                           \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const int>);                                   \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                                \
  template Tensor<T> mean_pool(const Tensor<T>&);                                                           \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, std::mt19937_64&);                             \
  template Tensor<T> apply_rotary(const Tensor<T>&, std::span<const int>, std::size_t);                     \
  template Tensor<T> causal_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,    \
                                      std::size_t);                                                         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);

MAGMA_INSTANTIATE_OPS(float)
MAGMA_INSTANTIATE_OPS(double)

}  // namespace magma::ops
