#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <tuple>

#include "bisimlab/ad/graph.hpp"

namespace bisimlab::ad {

namespace detail {

template <typename Scalar>
Graph<Scalar>& same_graph(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.graph == nullptr || a.graph != b.graph) throw InvalidInput("operands belong to different graphs");
  return *a.graph;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline std::string pair_str(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
}

/// outer x n x inner decomposition of a shape around `axis`.
struct AxisSplit {
  Index outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, Index axis) {
  const Index r = static_cast<Index>(shape.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw InvalidInput("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.n = shape[static_cast<std::size_t>(axis)];
  for (Index i = axis + 1; i < r; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

inline Index normalize_axis(Index axis, Index rank) { return axis < 0 ? axis + rank : axis; }

/// Elementwise binary op where `b` may be broadcast over leading dims of `a`
/// (or the reverse). Returns {big, small, swapped}.
template <typename Scalar>
std::tuple<Var<Scalar>, Var<Scalar>, bool> broadcast_order(const char* op, const Var<Scalar>& a,
                                                            const Var<Scalar>& b) {
  if (is_suffix(b.shape(), a.shape())) return {a, b, false};
  if (is_suffix(a.shape(), b.shape())) return {b, a, true};
  throw InvalidInput(pair_str(op, a.shape(), b.shape()));
}

/// Sum of a big-shaped gradient over the broadcast (leading) dims.
template <typename Scalar>
typename Tensor<Scalar>::Vec reduce_broadcast(const Tensor<Scalar>& g, Index small_size) {
  return g.matrix(g.size() / small_size, small_size).colwise().sum().transpose();
}

}  // namespace detail

/// a + b, with suffix broadcasting of the smaller operand.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& g = detail::same_graph(a, b);
  auto [big, small, swapped] = detail::broadcast_order("add", a, b);
  const auto& B = big.value();
  const auto& S = small.value();
  Tensor<Scalar> out = B;
  out.requires_grad = false;
  out.matrix(B.size() / S.size(), S.size()).rowwise() += S.data.transpose();
  const int ib = big.id, is = small.id;
  const Index ns = S.size();
  return g.record(std::move(out), {ib, is}, [&g, ib, is, ns](const Tensor<Scalar>& go) {
    if (auto* gb = g.grad_slot(ib)) gb->data += go.data;
    if (auto* gs = g.grad_slot(is)) gs->data += detail::reduce_broadcast(go, ns);
  });
}

/// a - b, with suffix broadcasting.
template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& g = detail::same_graph(a, b);
  auto [big, small, swapped] = detail::broadcast_order("sub", a, b);
  const auto& B = big.value();
  const auto& S = small.value();
  const Scalar sign = swapped ? Scalar(-1) : Scalar(1);
  Tensor<Scalar> out(B.shape);
  out.matrix(B.size() / S.size(), S.size()) =
      sign * (B.matrix(B.size() / S.size(), S.size()).rowwise() - S.data.transpose());
  const int ib = big.id, is = small.id;
  const Index ns = S.size();
  return g.record(std::move(out), {ib, is}, [&g, ib, is, ns, sign](const Tensor<Scalar>& go) {
    if (auto* gb = g.grad_slot(ib)) gb->data += sign * go.data;
    if (auto* gs = g.grad_slot(is)) gs->data -= sign * detail::reduce_broadcast(go, ns);
  });
}

/// Elementwise a * b, with suffix broadcasting.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& g = detail::same_graph(a, b);
  auto [big, small, swapped] = detail::broadcast_order("mul", a, b);
  const auto& B = big.value();
  const auto& S = small.value();
  const Index rows = B.size() / S.size();
  Tensor<Scalar> out(B.shape);
  out.matrix(rows, S.size()) = B.matrix(rows, S.size()).array().rowwise() * S.data.transpose().array();
  const int ib = big.id, is = small.id;
  return g.record(std::move(out), {ib, is}, [&g, ib, is, rows](const Tensor<Scalar>& go) {
    const auto& Bv = g.value(ib);
    const auto& Sv = g.value(is);
    const Index ns = Sv.size();
    if (auto* gb = g.grad_slot(ib))
      gb->matrix(rows, ns).array() += go.matrix(rows, ns).array().rowwise() * Sv.data.transpose().array();
    if (auto* gs = g.grad_slot(is))
      gs->data += (go.matrix(rows, ns).array() * Bv.matrix(rows, ns).array()).colwise().sum().transpose().matrix();
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  auto& g = *a.graph;
  Tensor<Scalar> out(a.shape(), (s * a.value().data).eval());
  const int ia = a.id;
  return g.record(std::move(out), {ia}, [&g, ia, s](const Tensor<Scalar>& go) {
    if (auto* ga = g.grad_slot(ia)) ga->data += s * go.data;
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  auto& g = *a.graph;
  Tensor<Scalar> out(a.shape(), a.value().data.cwiseMax(Scalar(0)).eval());
  const int ia = a.id;
  return g.record(std::move(out), {ia}, [&g, ia](const Tensor<Scalar>& go) {
    if (auto* ga = g.grad_slot(ia))
      ga->data.array() += (g.value(ia).data.array() > Scalar(0)).select(go.data.array(), Scalar(0));
  });
}

/// Exact GELU, x * Phi(x).
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  auto& g = *a.graph;
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  Tensor<Scalar> out(a.shape());
  const auto& x = a.value().data;
  for (Index i = 0; i < x.size(); ++i) out.data(i) = Scalar(0.5) * x(i) * (Scalar(1) + std::erf(x(i) * inv_sqrt2));
  const int ia = a.id;
  return g.record(std::move(out), {ia}, [&g, ia, inv_sqrt2](const Tensor<Scalar>& go) {
    auto* ga = g.grad_slot(ia);
    if (!ga) return;
    const auto& xv = g.value(ia).data;
    const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    for (Index i = 0; i < xv.size(); ++i) {
      const Scalar v = xv(i);
      const Scalar d = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2)) + v * std::exp(Scalar(-0.5) * v * v) * inv_sqrt_2pi;
      ga->data(i) += go.data(i) * d;
    }
  });
}

/// Matrix product. `b` of rank 2 multiplies the last dim of `a` (leading dims
/// of `a` act as rows); two rank-3 operands with equal batch size multiply
/// batch-wise.
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& g = detail::same_graph(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  const int ia = a.id, ib = b.id;
  if (A.rank() >= 2 && B.rank() == 2 && A.shape.back() == B.shape[0]) {
    const Index K = B.shape[0], N = B.shape[1], M = A.size() / K;
    Shape s = A.shape;
    s.back() = N;
    Tensor<Scalar> out(s);
    out.matrix(M, N).noalias() = A.matrix(M, K) * B.matrix(K, N);
    return g.record(std::move(out), {ia, ib}, [&g, ia, ib, M, K, N](const Tensor<Scalar>& go) {
      const auto G = go.matrix(M, N);
      if (auto* ga = g.grad_slot(ia)) ga->matrix(M, K).noalias() += G * g.value(ib).matrix(K, N).transpose();
      if (auto* gb = g.grad_slot(ib)) gb->matrix(K, N).noalias() += g.value(ia).matrix(M, K).transpose() * G;
    });
  }
  if (A.rank() == 3 && B.rank() == 3 && A.shape[0] == B.shape[0] && A.shape[2] == B.shape[1]) {
    const Index Bt = A.shape[0], M = A.shape[1], K = A.shape[2], N = B.shape[2];
    Tensor<Scalar> out(Shape{Bt, M, N});
    for (Index t = 0; t < Bt; ++t) {
      Eigen::Map<typename Tensor<Scalar>::RowMat>(out.data.data() + t * M * N, M, N).noalias() =
          Eigen::Map<const typename Tensor<Scalar>::RowMat>(A.data.data() + t * M * K, M, K) *
          Eigen::Map<const typename Tensor<Scalar>::RowMat>(B.data.data() + t * K * N, K, N);
    }
    return g.record(std::move(out), {ia, ib}, [&g, ia, ib, Bt, M, K, N](const Tensor<Scalar>& go) {
      using CMap = Eigen::Map<const typename Tensor<Scalar>::RowMat>;
      using MMap = Eigen::Map<typename Tensor<Scalar>::RowMat>;
      auto* ga = g.grad_slot(ia);
      auto* gb = g.grad_slot(ib);
      const auto& Av = g.value(ia);
      const auto& Bv = g.value(ib);
      for (Index t = 0; t < Bt; ++t) {
        CMap G(go.data.data() + t * M * N, M, N);
        if (ga) MMap(ga->data.data() + t * M * K, M, K).noalias() += G * CMap(Bv.data.data() + t * K * N, K, N).transpose();
        if (gb) MMap(gb->data.data() + t * K * N, K, N).noalias() += CMap(Av.data.data() + t * M * K, M, K).transpose() * G;
      }
    });
  }
  throw InvalidInput(detail::pair_str("matmul", A.shape, B.shape));
}

/// Swaps the last two dimensions.
template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  auto& g = *a.graph;
  const auto& A = a.value();
  if (A.rank() < 2) throw InvalidInput("transpose: need rank >= 2, got " + shape_str(A.shape));
  const Index R = A.dim(-2), C = A.dim(-1), batch = A.size() / (R * C);
  Shape s = A.shape;
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  Tensor<Scalar> out(s);
  for (Index t = 0; t < batch; ++t)
    Eigen::Map<typename Tensor<Scalar>::RowMat>(out.data.data() + t * R * C, C, R) =
        Eigen::Map<const typename Tensor<Scalar>::RowMat>(A.data.data() + t * R * C, R, C).transpose();
  const int ia = a.id;
  return g.record(std::move(out), {ia}, [&g, ia, R, C, batch](const Tensor<Scalar>& go) {
    auto* ga = g.grad_slot(ia);
    if (!ga) return;
    for (Index t = 0; t < batch; ++t)
      Eigen::Map<typename Tensor<Scalar>::RowMat>(ga->data.data() + t * R * C, R, C) +=
          Eigen::Map<const typename Tensor<Scalar>::RowMat>(go.data.data() + t * R * C, C, R).transpose();
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  auto& g = *a.graph;
  Tensor<Scalar> out = a.value().reshaped(std::move(shape));
  out.requires_grad = false;
  const int ia = a.id;
  return g.record(std::move(out), {ia}, [&g, ia](const Tensor<Scalar>& go) {
    if (auto* ga = g.grad_slot(ia)) ga->data += go.data;
  });
}

/// Same value, cut off from differentiation.
template <typename Scalar>
Var<Scalar> stop_gradient(const Var<Scalar>& a) {
  return a.graph->constant(a.value());
}

/// 2-D convolution. x: [N, C, H, W], w: [O, C, kh, kw], b: [O].
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b, Index stride, Index pad) {
  auto& g = detail::same_graph(x, w);
  detail::same_graph(x, b);
  const auto& X = x.value();
  const auto& Wt = w.value();
  if (X.rank() != 4 || Wt.rank() != 4 || X.shape[1] != Wt.shape[1])
    throw InvalidInput(detail::pair_str("conv2d", X.shape, Wt.shape));
  if (b.value().shape != Shape{Wt.shape[0]})
    throw InvalidInput(detail::pair_str("conv2d bias", b.shape(), Shape{Wt.shape[0]}));
  if (stride < 1 || pad < 0) throw InvalidInput("conv2d: stride must be >= 1 and pad >= 0");
  const Index N = X.shape[0], C = X.shape[1], H = X.shape[2], Wd = X.shape[3];
  const Index O = Wt.shape[0], kh = Wt.shape[2], kw = Wt.shape[3];
  const Index Ho = (H + 2 * pad - kh) / stride + 1;
  const Index Wo = (Wd + 2 * pad - kw) / stride + 1;
  if (H + 2 * pad < kh || Wd + 2 * pad < kw)
    throw InvalidInput(detail::pair_str("conv2d: kernel larger than padded input", X.shape, Wt.shape));
  const Index P = Ho * Wo, CK = C * kh * kw;

  using RowMat = typename Tensor<Scalar>::RowMat;
  auto cols = std::make_shared<RowMat>(RowMat::Zero(CK, N * P));
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index ki = 0; ki < kh; ++ki)
        for (Index kj = 0; kj < kw; ++kj) {
          const Index row = (c * kh + ki) * kw + kj;
          for (Index oy = 0; oy < Ho; ++oy) {
            const Index iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= H) continue;
            for (Index ox = 0; ox < Wo; ++ox) {
              const Index ix = ox * stride - pad + kj;
              if (ix < 0 || ix >= Wd) continue;
              (*cols)(row, n * P + oy * Wo + ox) = X.data(((n * C + c) * H + iy) * Wd + ix);
            }
          }
        }
  RowMat prod = Wt.matrix(O, CK) * (*cols);
  prod.colwise() += b.value().data;
  Tensor<Scalar> out(Shape{N, O, Ho, Wo});
  for (Index n = 0; n < N; ++n)
    for (Index o = 0; o < O; ++o)
      out.data.segment((n * O + o) * P, P) = prod.row(o).segment(n * P, P).transpose();

  const int ix_ = x.id, iw = w.id, ib = b.id;
  return g.record(std::move(out), {ix_, iw, ib},
                  [&g, ix_, iw, ib, cols, N, C, H, Wd, O, kh, kw, Ho, Wo, P, CK, stride, pad](const Tensor<Scalar>& go) {
                    RowMat G(O, N * P);
                    for (Index n = 0; n < N; ++n)
                      for (Index o = 0; o < O; ++o)
                        G.row(o).segment(n * P, P) = go.data.segment((n * O + o) * P, P).transpose();
                    if (auto* gw = g.grad_slot(iw)) gw->matrix(O, CK).noalias() += G * cols->transpose();
                    if (auto* gb = g.grad_slot(ib)) gb->data += G.rowwise().sum();
                    auto* gx = g.grad_slot(ix_);
                    if (!gx) return;
                    RowMat dcols = g.value(iw).matrix(O, CK).transpose() * G;
                    for (Index n = 0; n < N; ++n)
                      for (Index c = 0; c < C; ++c)
                        for (Index ki = 0; ki < kh; ++ki)
                          for (Index kj = 0; kj < kw; ++kj) {
                            const Index row = (c * kh + ki) * kw + kj;
                            for (Index oy = 0; oy < Ho; ++oy) {
                              const Index iy = oy * stride - pad + ki;
                              if (iy < 0 || iy >= H) continue;
                              for (Index ox = 0; ox < Wo; ++ox) {
                                const Index ixx = ox * stride - pad + kj;
                                if (ixx < 0 || ixx >= Wd) continue;
                                gx->data(((n * C + c) * H + iy) * Wd + ixx) += dcols(row, n * P + oy * Wo + ox);
                              }
                            }
                          }
                  });
}

/// Normalizes the last dimension to zero mean and unit variance (no affine).
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& a, Scalar eps) {
  auto& g = *a.graph;
  const auto& A = a.value();
  if (A.rank() < 1) throw InvalidInput("layer_norm: need rank >= 1");
  const Index D = A.shape.back(), R = A.size() / D;
  auto inv_std = std::make_shared<typename Tensor<Scalar>::Vec>(R);
  Tensor<Scalar> out(A.shape);
  for (Index r = 0; r < R; ++r) {
    const auto row = A.data.segment(r * D, D);
    const Scalar mu = row.mean();
    const Scalar var = (row.array() - mu).square().mean();
    (*inv_std)(r) = Scalar(1) / std::sqrt(var + eps);
    out.data.segment(r * D, D) = (row.array() - mu) * (*inv_std)(r);
  }
  const int ia = a.id;
  const int self = static_cast<int>(g.n_nodes());
  return g.record(std::move(out), {ia}, [&g, ia, self, inv_std, R, D](const Tensor<Scalar>& go) {
    auto* ga = g.grad_slot(ia);
    if (!ga) return;
    const auto& y = g.value(self);
    for (Index r = 0; r < R; ++r) {
      const auto gr = go.data.segment(r * D, D);
      const auto yr = y.data.segment(r * D, D);
      const Scalar gsum = gr.sum();
      const Scalar gy = gr.dot(yr);
      ga->data.segment(r * D, D).array() +=
          (*inv_std)(r) / Scalar(D) * (Scalar(D) * gr.array() - gsum - yr.array() * gy);
    }
  });
}

/// Softmax along `axis`.
template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& a, Index axis = -1) {
  auto& g = *a.graph;
  const auto& A = a.value();
  const auto sp = detail::split_axis(A.shape, axis);
  Tensor<Scalar> out(A.shape);
  for (Index o = 0; o < sp.outer; ++o)
    for (Index in = 0; in < sp.inner; ++in) {
      const Index base = o * sp.n * sp.inner + in;
      Scalar mx = A.data(base);
      for (Index k = 1; k < sp.n; ++k) mx = std::max(mx, A.data(base + k * sp.inner));
      Scalar total = 0;
      for (Index k = 0; k < sp.n; ++k) {
        const Scalar e = std::exp(A.data(base + k * sp.inner) - mx);
        out.data(base + k * sp.inner) = e;
        total += e;
      }
      for (Index k = 0; k < sp.n; ++k) out.data(base + k * sp.inner) /= total;
    }
  const int ia = a.id;
  const int self = static_cast<int>(g.n_nodes());
  return g.record(std::move(out), {ia}, [&g, ia, self, sp](const Tensor<Scalar>& go) {
    auto* ga = g.grad_slot(ia);
    if (!ga) return;
    const auto& y = g.value(self).data;
    for (Index o = 0; o < sp.outer; ++o)
      for (Index in = 0; in < sp.inner; ++in) {
        const Index base = o * sp.n * sp.inner + in;
        Scalar dot = 0;
        for (Index k = 0; k < sp.n; ++k) dot += go.data(base + k * sp.inner) * y(base + k * sp.inner);
        for (Index k = 0; k < sp.n; ++k) {
          const Index i = base + k * sp.inner;
          ga->data(i) += y(i) * (go.data(i) - dot);
        }
      }
  });
}

/// Rows of `table` ([V, d]) selected by `indices`; result [n, d].
template <typename Scalar>
Var<Scalar> embedding_lookup(const Var<Scalar>& table, const std::vector<Index>& indices) {
  auto& g = *table.graph;
  const auto& Tb = table.value();
  if (Tb.rank() != 2) throw InvalidInput("embedding_lookup: table must be rank 2, got " + shape_str(Tb.shape));
  if (indices.empty()) throw InvalidInput("embedding_lookup: no indices");
  const Index V = Tb.shape[0], D = Tb.shape[1];
  Tensor<Scalar> out(Shape{static_cast<Index>(indices.size()), D});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= V)
      throw InvalidInput("embedding_lookup: index " + std::to_string(indices[i]) + " outside table of " +
                         std::to_string(V) + " rows");
    out.data.segment(static_cast<Index>(i) * D, D) = Tb.data.segment(indices[i] * D, D);
  }
  const int it = table.id;
  return g.record(std::move(out), {it}, [&g, it, indices, D](const Tensor<Scalar>& go) {
    auto* gt = g.grad_slot(it);
    if (!gt) return;
    for (std::size_t i = 0; i < indices.size(); ++i)
      gt->data.segment(indices[i] * D, D) += go.data.segment(static_cast<Index>(i) * D, D);
  });
}

/// Concatenation along `axis`; all other dimensions must agree.
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw InvalidInput("concat: no inputs");
  auto& g = *parts[0].graph;
  const Shape& first = parts[0].shape();
  const Index ax = detail::normalize_axis(axis, static_cast<Index>(first.size()));
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(ax)] = 0;
  std::vector<int> ids;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    detail::same_graph(parts[0], p);
    Shape s = p.shape();
    if (s.size() != first.size()) throw InvalidInput(detail::pair_str("concat", first, s));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (static_cast<Index>(d) != ax && s[d] != first[d]) throw InvalidInput(detail::pair_str("concat", first, s));
    out_shape[static_cast<std::size_t>(ax)] += s[static_cast<std::size_t>(ax)];
    ids.push_back(p.id);
  }
  const auto sp = detail::split_axis(out_shape, ax);
  for (const auto& p : parts) widths.push_back(p.shape()[static_cast<std::size_t>(ax)] * sp.inner);
  const Index row = sp.n * sp.inner;
  Tensor<Scalar> out(out_shape);
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (Index o = 0; o < sp.outer; ++o)
      out.data.segment(o * row + offset, widths[k]) = v.data.segment(o * widths[k], widths[k]);
    offset += widths[k];
  }
  return g.record(std::move(out), ids, [&g, ids, widths, sp, row](const Tensor<Scalar>& go) {
    Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (auto* gp = g.grad_slot(ids[k]))
        for (Index o = 0; o < sp.outer; ++o)
          gp->data.segment(o * widths[k], widths[k]) += go.data.segment(o * row + off, widths[k]);
      off += widths[k];
    }
  });
}

/// Sub-range [start, start + length) along `axis`.
template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& a, Index axis, Index start, Index length) {
  auto& g = *a.graph;
  const auto& A = a.value();
  const auto sp = detail::split_axis(A.shape, axis);
  if (start < 0 || length < 1 || start + length > sp.n)
    throw InvalidInput("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                       ") outside " + shape_str(A.shape));
  Shape s = A.shape;
  s[static_cast<std::size_t>(detail::normalize_axis(axis, A.rank()))] = length;
  Tensor<Scalar> out(s);
  const Index w = length * sp.inner, row = sp.n * sp.inner, off = start * sp.inner;
  for (Index o = 0; o < sp.outer; ++o) out.data.segment(o * w, w) = A.data.segment(o * row + off, w);
  const int ia = a.id;
  return g.record(std::move(out), {ia}, [&g, ia, sp, w, row, off](const Tensor<Scalar>& go) {
    if (auto* ga = g.grad_slot(ia))
      for (Index o = 0; o < sp.outer; ++o) ga->data.segment(o * row + off, w) += go.data.segment(o * w, w);
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  auto& g = *a.graph;
  const int ia = a.id;
  return g.record(Tensor<Scalar>::scalar(a.value().data.sum()), {ia}, [&g, ia](const Tensor<Scalar>& go) {
    if (auto* ga = g.grad_slot(ia)) ga->data.array() += go.data(0);
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

/// Mean of squared differences over all entries; shapes must match exactly.
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& g = detail::same_graph(a, b);
  if (a.shape() != b.shape()) throw InvalidInput(detail::pair_str("mse", a.shape(), b.shape()));
  const Index n = a.size();
  const Scalar value = (a.value().data - b.value().data).squaredNorm() / static_cast<Scalar>(n);
  const int ia = a.id, ib = b.id;
  return g.record(Tensor<Scalar>::scalar(value), {ia, ib}, [&g, ia, ib, n](const Tensor<Scalar>& go) {
    const Scalar c = Scalar(2) * go.data(0) / static_cast<Scalar>(n);
    auto* ga = g.grad_slot(ia);
    auto* gb = g.grad_slot(ib);
    if (!ga && !gb) return;
    const typename Tensor<Scalar>::Vec diff = g.value(ia).data - g.value(ib).data;
    if (ga) ga->data += c * diff;
    if (gb) gb->data -= c * diff;
  });
}

/// Row-wise cosine distance 1 - <a_i, b_i> / (|a_i| |b_i|) over the last
/// dimension. Rows with norm below 1e-8 are rejected.
template <typename Scalar>
Var<Scalar> cosine_distance_batch(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& g = detail::same_graph(a, b);
  if (a.shape() != b.shape() || a.value().rank() < 1)
    throw InvalidInput(detail::pair_str("cosine_distance_batch", a.shape(), b.shape()));
  const auto A = a.value().as_rows();
  const auto B = b.value().as_rows();
  const Index R = A.rows();
  Shape s(a.shape().begin(), a.shape().end() - 1);
  Tensor<Scalar> out(s.empty() ? Shape{1} : s);
  for (Index r = 0; r < R; ++r) {
    const Scalar na = A.row(r).norm(), nb = B.row(r).norm();
    if (!(na >= Scalar(1e-8)) || !(nb >= Scalar(1e-8)))
      throw InvalidInput("cosine_distance_batch: row " + std::to_string(r) + " has zero norm");
    out.data(r) = std::clamp(Scalar(1) - A.row(r).dot(B.row(r)) / (na * nb), Scalar(0), Scalar(2));
  }
  const int ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib}, [&g, ia, ib, R](const Tensor<Scalar>& go) {
    auto* ga = g.grad_slot(ia);
    auto* gb = g.grad_slot(ib);
    const auto Av = g.value(ia).as_rows();
    const auto Bv = g.value(ib).as_rows();
    const Index D = Av.cols();
    for (Index r = 0; r < R; ++r) {
      const Scalar na = Av.row(r).norm(), nb = Bv.row(r).norm();
      const Scalar c = Av.row(r).dot(Bv.row(r)) / (na * nb);
      const Scalar gr = go.data(r);
      // d(1 - c)/da = -(b / (|a||b|) - c a / |a|^2)
      if (ga) ga->data.segment(r * D, D) -= gr * (Bv.row(r) / (na * nb) - c * Av.row(r) / (na * na)).transpose();
      if (gb) gb->data.segment(r * D, D) -= gr * (Av.row(r) / (na * nb) - c * Bv.row(r) / (nb * nb)).transpose();
    }
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }

}  // namespace bisimlab::ad
