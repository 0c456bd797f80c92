#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dualenc/tape.hpp"

// Forward/backward rules for every primitive the network needs. All inputs
// are explicit-shape; the only broadcast is bias-add over the leading axis.
namespace dualenc::ad {

namespace detail {

template <class T>
inline void same_tape(const char* op, const ValueT<T>& a, const ValueT<T>& b) {
  if (a.tape != b.tape) throw std::logic_error(std::string(op) + ": operands live on different tapes");
}

inline void require(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + msg);
}

}  // namespace detail

// ---- elementwise binary ----------------------------------------------------

template <class T, class Fwd, class Bwd>
ValueT<T> elementwise_binary(const char* op, ValueT<T> a, ValueT<T> b, Fwd fwd, Bwd bwd) {
  detail::same_tape(op, a, b);
  detail::require(a.shape() == b.shape(), op,
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto& x = a.data();
  const auto& y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i], y[i]);
  NodeT<T>& n = a.tape->record(op, TensorT<T>(a.shape(), std::move(out)), {a.node, b.node});
  n.backward = [bwd](NodeT<T>& self) {
    auto* ga = adj(self.inputs[0]);
    auto* gb = adj(self.inputs[1]);
    const auto& x = self.inputs[0]->val().data;
    const auto& y = self.inputs[1]->val().data;
    for (std::size_t i = 0; i < self.adjoint.size(); ++i) {
      T dx, dy;
      bwd(x[i], y[i], self.adjoint[i], dx, dy);
      if (ga) (*ga)[i] += dx;
      if (gb) (*gb)[i] += dy;
    }
  };
  return {a.tape, &n};
}

template <class T>
ValueT<T> add(ValueT<T> a, ValueT<T> b) {
  return elementwise_binary<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g, T& dx, T& dy) { dx = g; dy = g; });
}

template <class T>
ValueT<T> sub(ValueT<T> a, ValueT<T> b) {
  return elementwise_binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g, T& dx, T& dy) { dx = g; dy = -g; });
}

template <class T>
ValueT<T> mul(ValueT<T> a, ValueT<T> b) {
  return elementwise_binary<T>(
      "elementwise_mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g, T& dx, T& dy) { dx = g * y; dy = g * x; });
}

// ---- elementwise unary -----------------------------------------------------

template <class T>
ValueT<T> sigmoid(ValueT<T> a) {
  const auto& x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  NodeT<T>& n = a.tape->record("sigmoid", TensorT<T>(a.shape(), std::move(out)), {a.node});
  n.backward = [](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    const auto& y = self.val().data;
    for (std::size_t i = 0; i < y.size(); ++i) (*g)[i] += self.adjoint[i] * y[i] * (T(1) - y[i]);
  };
  return {a.tape, &n};
}

template <class T>
ValueT<T> tanh_(ValueT<T> a) {
  const auto& x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  NodeT<T>& n = a.tape->record("tanh", TensorT<T>(a.shape(), std::move(out)), {a.node});
  n.backward = [](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    const auto& y = self.val().data;
    for (std::size_t i = 0; i < y.size(); ++i) (*g)[i] += self.adjoint[i] * (T(1) - y[i] * y[i]);
  };
  return {a.tape, &n};
}

template <class T>
ValueT<T> relu(ValueT<T> a) {
  const auto& x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  NodeT<T>& n = a.tape->record("relu", TensorT<T>(a.shape(), std::move(out)), {a.node});
  n.backward = [](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    const auto& x = self.inputs[0]->val().data;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > T(0)) (*g)[i] += self.adjoint[i];
  };
  return {a.tape, &n};
}

// out = mul * x + add, elementwise with scalar coefficients.
template <class T>
ValueT<T> scalar_affine(ValueT<T> a, T mul_c, T add_c) {
  const auto& x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = mul_c * x[i] + add_c;
  NodeT<T>& n = a.tape->record("scalar_affine", TensorT<T>(a.shape(), std::move(out)), {a.node});
  n.backward = [mul_c](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    for (std::size_t i = 0; i < self.adjoint.size(); ++i) (*g)[i] += mul_c * self.adjoint[i];
  };
  return {a.tape, &n};
}

// ---- matrix products -------------------------------------------------------

// {m,k} x {k,n} -> {m,n}; a 1-D lhs {k} is treated as a single row -> {n}.
template <class T>
ValueT<T> matmul(ValueT<T> a, ValueT<T> b) {
  detail::same_tape("matmul", a, b);
  detail::require(b.shape().size() == 2, "matmul", "rhs must be 2-D, got " + shape_str(b.shape()));
  const bool vec = a.shape().size() == 1;
  detail::require(vec || a.shape().size() == 2, "matmul",
                  "lhs must be 1-D or 2-D, got " + shape_str(a.shape()));
  const std::int64_t m = vec ? 1 : a.shape()[0];
  const std::int64_t k = vec ? a.shape()[0] : a.shape()[1];
  detail::require(b.shape()[0] == k, "matmul",
                  "inner extents differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::int64_t nn = b.shape()[1];

  const auto& A = a.data();
  const auto& B = b.data();
  std::vector<T> out(static_cast<std::size_t>(m * nn), T(0));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T aik = A[static_cast<std::size_t>(i * k + kk)];
      if (aik == T(0)) continue;
      const T* brow = &B[static_cast<std::size_t>(kk * nn)];
      T* orow = &out[static_cast<std::size_t>(i * nn)];
      for (std::int64_t j = 0; j < nn; ++j) orow[j] += aik * brow[j];
    }

  Shape oshape = vec ? Shape{nn} : Shape{m, nn};
  NodeT<T>& n = a.tape->record("matmul", TensorT<T>(std::move(oshape), std::move(out)), {a.node, b.node});
  n.backward = [m, k, nn](NodeT<T>& self) {
    const auto& A = self.inputs[0]->val().data;
    const auto& B = self.inputs[1]->val().data;
    const auto& G = self.adjoint;
    if (auto* ga = adj(self.inputs[0])) {
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t kk = 0; kk < k; ++kk) {
          T acc = T(0);
          const T* grow = &G[static_cast<std::size_t>(i * nn)];
          const T* brow = &B[static_cast<std::size_t>(kk * nn)];
          for (std::int64_t j = 0; j < nn; ++j) acc += grow[j] * brow[j];
          (*ga)[static_cast<std::size_t>(i * k + kk)] += acc;
        }
    }
    if (auto* gb = adj(self.inputs[1])) {
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t kk = 0; kk < k; ++kk) {
          const T aik = A[static_cast<std::size_t>(i * k + kk)];
          if (aik == T(0)) continue;
          const T* grow = &G[static_cast<std::size_t>(i * nn)];
          T* gbrow = &(*gb)[static_cast<std::size_t>(kk * nn)];
          for (std::int64_t j = 0; j < nn; ++j) gbrow[j] += aik * grow[j];
        }
    }
  };
  return {a.tape, &n};
}

// {m,k} x {n,k} -> {m,n}, i.e. a * b^T. Rows of b are contiguous, which is
// what the cosine-similarity matrix wants.
template <class T>
ValueT<T> matmul_nt(ValueT<T> a, ValueT<T> b) {
  detail::same_tape("matmul_nt", a, b);
  detail::require(a.shape().size() == 2 && b.shape().size() == 2, "matmul_nt",
                  "expects 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  detail::require(a.shape()[1] == b.shape()[1], "matmul_nt",
                  "inner extents differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::int64_t m = a.shape()[0], k = a.shape()[1], nn = b.shape()[0];
  const auto& A = a.data();
  const auto& B = b.data();
  std::vector<T> out(static_cast<std::size_t>(m * nn));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < nn; ++j) {
      T acc = T(0);
      const T* ar = &A[static_cast<std::size_t>(i * k)];
      const T* br = &B[static_cast<std::size_t>(j * k)];
      for (std::int64_t kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
      out[static_cast<std::size_t>(i * nn + j)] = acc;
    }
  NodeT<T>& n = a.tape->record("matmul_nt", TensorT<T>({m, nn}, std::move(out)), {a.node, b.node});
  n.backward = [m, k, nn](NodeT<T>& self) {
    const auto& A = self.inputs[0]->val().data;
    const auto& B = self.inputs[1]->val().data;
    const auto& G = self.adjoint;
    if (auto* ga = adj(self.inputs[0])) {
      // dA = G * B
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < nn; ++j) {
          const T g = G[static_cast<std::size_t>(i * nn + j)];
          if (g == T(0)) continue;
          const T* br = &B[static_cast<std::size_t>(j * k)];
          T* gar = &(*ga)[static_cast<std::size_t>(i * k)];
          for (std::int64_t kk = 0; kk < k; ++kk) gar[kk] += g * br[kk];
        }
    }
    if (auto* gb = adj(self.inputs[1])) {
      // dB = G^T * A
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < nn; ++j) {
          const T g = G[static_cast<std::size_t>(i * nn + j)];
          if (g == T(0)) continue;
          const T* ar = &A[static_cast<std::size_t>(i * k)];
          T* gbr = &(*gb)[static_cast<std::size_t>(j * k)];
          for (std::int64_t kk = 0; kk < k; ++kk) gbr[kk] += g * ar[kk];
        }
    }
  };
  return {a.tape, &n};
}

// x {n,c} + bias {c}, broadcast over rows.
template <class T>
ValueT<T> add_bias(ValueT<T> x, ValueT<T> bias) {
  detail::same_tape("add_bias", x, bias);
  detail::require(x.shape().size() == 2 && bias.shape().size() == 1 && x.shape()[1] == bias.shape()[0],
                  "add_bias",
                  "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
  const std::int64_t rows = x.shape()[0], c = x.shape()[1];
  const auto& xd = x.data();
  const auto& bd = bias.data();
  std::vector<T> out(xd.size());
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i * c + j)] = xd[static_cast<std::size_t>(i * c + j)] + bd[static_cast<std::size_t>(j)];
  NodeT<T>& n = x.tape->record("add_bias", TensorT<T>(x.shape(), std::move(out)), {x.node, bias.node});
  n.backward = [rows, c](NodeT<T>& self) {
    if (auto* gx = adj(self.inputs[0]))
      for (std::size_t i = 0; i < self.adjoint.size(); ++i) (*gx)[i] += self.adjoint[i];
    if (auto* gbias = adj(self.inputs[1]))
      for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < c; ++j)
          (*gbias)[static_cast<std::size_t>(j)] += self.adjoint[static_cast<std::size_t>(i * c + j)];
  };
  return {x.tape, &n};
}

// x * w + b; the FC layer. 1-D x yields a 1-D result.
template <class T>
ValueT<T> affine(ValueT<T> x, ValueT<T> w, ValueT<T> b) {
  ValueT<T> y = matmul(x, w);
  if (y.shape().size() == 2) return add_bias(y, b);
  return add(y, b);
}

// ---- reductions ------------------------------------------------------------

template <class T>
ValueT<T> mean_rows(ValueT<T> x) {
  detail::require(x.shape().size() == 2, "mean_axis", "expects 2-D input, got " + shape_str(x.shape()));
  const std::int64_t rows = x.shape()[0], c = x.shape()[1];
  detail::require(rows >= 1, "mean_axis", "empty axis");
  const auto& xd = x.data();
  std::vector<T> out(static_cast<std::size_t>(c), T(0));
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[static_cast<std::size_t>(j)] += xd[static_cast<std::size_t>(i * c + j)];
  for (auto& v : out) v /= static_cast<T>(rows);
  NodeT<T>& n = x.tape->record("mean_axis", TensorT<T>({c}, std::move(out)), {x.node});
  n.backward = [rows, c](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    const T inv = T(1) / static_cast<T>(rows);
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        (*g)[static_cast<std::size_t>(i * c + j)] += self.adjoint[static_cast<std::size_t>(j)] * inv;
  };
  return {x.tape, &n};
}

// Column-wise max over rows; gradient flows to the first maximal row only.
template <class T>
ValueT<T> max_rows(ValueT<T> x) {
  detail::require(x.shape().size() == 2, "max_axis", "expects 2-D input, got " + shape_str(x.shape()));
  const std::int64_t rows = x.shape()[0], c = x.shape()[1];
  detail::require(rows >= 1, "max_axis", "empty axis");
  const auto& xd = x.data();
  std::vector<T> out(static_cast<std::size_t>(c));
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(c), 0);
  for (std::int64_t j = 0; j < c; ++j) out[static_cast<std::size_t>(j)] = xd[static_cast<std::size_t>(j)];
  for (std::int64_t i = 1; i < rows; ++i)
    for (std::int64_t j = 0; j < c; ++j) {
      const T v = xd[static_cast<std::size_t>(i * c + j)];
      if (v > out[static_cast<std::size_t>(j)]) {
        out[static_cast<std::size_t>(j)] = v;
        argmax[static_cast<std::size_t>(j)] = i;
      }
    }
  NodeT<T>& n = x.tape->record("max_axis", TensorT<T>({c}, std::move(out)), {x.node});
  n.backward = [c, argmax = std::move(argmax)](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    for (std::int64_t j = 0; j < c; ++j)
      (*g)[static_cast<std::size_t>(argmax[static_cast<std::size_t>(j)] * c + j)] +=
          self.adjoint[static_cast<std::size_t>(j)];
  };
  return {x.tape, &n};
}

template <class T>
ValueT<T> sum_all(ValueT<T> x) {
  const auto& xd = x.data();
  T acc = T(0);
  for (T v : xd) acc += v;
  NodeT<T>& n = x.tape->record("sum_all", TensorT<T>::scalar(acc), {x.node});
  n.backward = [](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    for (auto& v : *g) v += self.adjoint[0];
  };
  return {x.tape, &n};
}

template <class T>
ValueT<T> mean_all(ValueT<T> x) {
  const auto& xd = x.data();
  detail::require(!xd.empty(), "mean_all", "empty input");
  T acc = T(0);
  for (T v : xd) acc += v;
  acc /= static_cast<T>(xd.size());
  NodeT<T>& n = x.tape->record("mean_all", TensorT<T>::scalar(acc), {x.node});
  n.backward = [](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    const T inv = T(1) / static_cast<T>(g->size());
    for (auto& v : *g) v += self.adjoint[0] * inv;
  };
  return {x.tape, &n};
}

// ---- shape assembly --------------------------------------------------------

// Concatenates along the last axis. All parts must share rank (1 or 2) and,
// for 2-D, the leading extent.
template <class T>
ValueT<T> concat_last_axis(const std::vector<ValueT<T>>& parts) {
  detail::require(!parts.empty(), "concat_last_axis", "no inputs");
  if (parts.size() == 1) return parts[0];
  const std::size_t rank = parts[0].shape().size();
  detail::require(rank == 1 || rank == 2, "concat_last_axis",
                  "expects 1-D or 2-D inputs, got " + shape_str(parts[0].shape()));
  const std::int64_t rows = rank == 2 ? parts[0].shape()[0] : 1;
  std::int64_t total_c = 0;
  std::vector<std::int64_t> widths;
  std::vector<NodeT<T>*> ins;
  for (const auto& p : parts) {
    detail::same_tape("concat_last_axis", parts[0], p);
    detail::require(p.shape().size() == rank && (rank == 1 || p.shape()[0] == rows), "concat_last_axis",
                    "shape mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    widths.push_back(p.shape()[rank - 1]);
    total_c += widths.back();
    ins.push_back(p.node);
  }
  std::vector<T> out(static_cast<std::size_t>(rows * total_c));
  std::int64_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& d = parts[pi].data();
    const std::int64_t w = widths[pi];
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < w; ++j)
        out[static_cast<std::size_t>(i * total_c + off + j)] = d[static_cast<std::size_t>(i * w + j)];
    off += w;
  }
  Shape oshape = rank == 2 ? Shape{rows, total_c} : Shape{total_c};
  NodeT<T>& n = parts[0].tape->record("concat_last_axis", TensorT<T>(std::move(oshape), std::move(out)),
                                      std::move(ins));
  n.backward = [rows, total_c, widths](NodeT<T>& self) {
    std::int64_t off = 0;
    for (std::size_t pi = 0; pi < self.inputs.size(); ++pi) {
      const std::int64_t w = widths[pi];
      if (auto* g = adj(self.inputs[pi]))
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < w; ++j)
            (*g)[static_cast<std::size_t>(i * w + j)] +=
                self.adjoint[static_cast<std::size_t>(i * total_c + off + j)];
      off += w;
    }
  };
  return {parts[0].tape, &n};
}

// k vectors of extent c stacked into {k, c}.
template <class T>
ValueT<T> stack_rows(const std::vector<ValueT<T>>& parts) {
  detail::require(!parts.empty(), "stack_rows", "no inputs");
  const std::int64_t c = parts[0].shape().size() == 1 ? parts[0].shape()[0] : -1;
  detail::require(c >= 1, "stack_rows", "expects 1-D inputs, got " + shape_str(parts[0].shape()));
  std::vector<NodeT<T>*> ins;
  std::vector<T> out;
  out.reserve(parts.size() * static_cast<std::size_t>(c));
  for (const auto& p : parts) {
    detail::same_tape("stack_rows", parts[0], p);
    detail::require(p.shape() == parts[0].shape(), "stack_rows",
                    "shape mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    out.insert(out.end(), p.data().begin(), p.data().end());
    ins.push_back(p.node);
  }
  NodeT<T>& n = parts[0].tape->record(
      "stack_rows", TensorT<T>({static_cast<std::int64_t>(parts.size()), c}, std::move(out)), std::move(ins));
  n.backward = [c](NodeT<T>& self) {
    for (std::size_t pi = 0; pi < self.inputs.size(); ++pi)
      if (auto* g = adj(self.inputs[pi]))
        for (std::int64_t j = 0; j < c; ++j)
          (*g)[static_cast<std::size_t>(j)] += self.adjoint[pi * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)];
  };
  return {parts[0].tape, &n};
}

template <class T>
ValueT<T> slice_row(ValueT<T> x, std::int64_t row) {
  detail::require(x.shape().size() == 2, "slice_row", "expects 2-D input, got " + shape_str(x.shape()));
  const std::int64_t rows = x.shape()[0], c = x.shape()[1];
  detail::require(row >= 0 && row < rows, "slice_row",
                  "row " + std::to_string(row) + " out of range for " + shape_str(x.shape()));
  const auto& xd = x.data();
  std::vector<T> out(xd.begin() + static_cast<std::ptrdiff_t>(row * c),
                     xd.begin() + static_cast<std::ptrdiff_t>((row + 1) * c));
  NodeT<T>& n = x.tape->record("slice_row", TensorT<T>({c}, std::move(out)), {x.node});
  n.backward = [row, c](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    for (std::int64_t j = 0; j < c; ++j)
      (*g)[static_cast<std::size_t>(row * c + j)] += self.adjoint[static_cast<std::size_t>(j)];
  };
  return {x.tape, &n};
}

// ---- sequence convolution --------------------------------------------------

// Length-preserving 1-d convolution over a {n, C} sequence with r filters of
// width k spanning all channels. Weights {r, k, C}, bias {r}, output {n, r}.
// Zero padding: k-1 total, floor((k-1)/2) on the left, remainder on the right.
template <class T>
ValueT<T> conv1d_same(ValueT<T> x, ValueT<T> w, ValueT<T> b) {
  detail::same_tape("conv1d_same", x, w);
  detail::same_tape("conv1d_same", x, b);
  detail::require(x.shape().size() == 2, "conv1d_same", "input must be 2-D, got " + shape_str(x.shape()));
  detail::require(w.shape().size() == 3, "conv1d_same", "weights must be {r,k,C}, got " + shape_str(w.shape()));
  const std::int64_t n_len = x.shape()[0], C = x.shape()[1];
  const std::int64_t r = w.shape()[0], k = w.shape()[1];
  if (k < 2)
    throw std::invalid_argument("conv1d_same: kernel size must be >= 2, got " + std::to_string(k));
  detail::require(w.shape()[2] == C, "conv1d_same",
                  "channel mismatch: input " + shape_str(x.shape()) + " vs weights " + shape_str(w.shape()));
  detail::require(b.shape() == Shape{r}, "conv1d_same",
                  "bias shape " + shape_str(b.shape()) + " does not match filter count " + std::to_string(r));
  const std::int64_t pad_left = (k - 1) / 2;

  const auto& xd = x.data();
  const auto& wd = w.data();
  const auto& bd = b.data();
  std::vector<T> out(static_cast<std::size_t>(n_len * r));
  for (std::int64_t t = 0; t < n_len; ++t)
    for (std::int64_t f = 0; f < r; ++f) {
      T acc = bd[static_cast<std::size_t>(f)];
      for (std::int64_t j = 0; j < k; ++j) {
        const std::int64_t u = t + j - pad_left;
        if (u < 0 || u >= n_len) continue;
        const T* xr = &xd[static_cast<std::size_t>(u * C)];
        const T* wr = &wd[static_cast<std::size_t>((f * k + j) * C)];
        for (std::int64_t c = 0; c < C; ++c) acc += xr[c] * wr[c];
      }
      out[static_cast<std::size_t>(t * r + f)] = acc;
    }
  NodeT<T>& n = x.tape->record("conv1d_same", TensorT<T>({n_len, r}, std::move(out)),
                               {x.node, w.node, b.node});
  n.backward = [n_len, C, r, k, pad_left](NodeT<T>& self) {
    const auto& xd = self.inputs[0]->val().data;
    const auto& wd = self.inputs[1]->val().data;
    const auto& G = self.adjoint;
    auto* gx = adj(self.inputs[0]);
    auto* gw = adj(self.inputs[1]);
    auto* gb = adj(self.inputs[2]);
    for (std::int64_t t = 0; t < n_len; ++t)
      for (std::int64_t f = 0; f < r; ++f) {
        const T g = G[static_cast<std::size_t>(t * r + f)];
        if (g == T(0)) continue;
        if (gb) (*gb)[static_cast<std::size_t>(f)] += g;
        for (std::int64_t j = 0; j < k; ++j) {
          const std::int64_t u = t + j - pad_left;
          if (u < 0 || u >= n_len) continue;
          const T* xr = &xd[static_cast<std::size_t>(u * C)];
          const T* wr = &wd[static_cast<std::size_t>((f * k + j) * C)];
          if (gx) {
            T* gxr = &(*gx)[static_cast<std::size_t>(u * C)];
            for (std::int64_t c = 0; c < C; ++c) gxr[c] += g * wr[c];
          }
          if (gw) {
            T* gwr = &(*gw)[static_cast<std::size_t>((f * k + j) * C)];
            for (std::int64_t c = 0; c < C; ++c) gwr[c] += g * xr[c];
          }
        }
      }
  };
  return {x.tape, &n};
}

// ---- batch normalization ---------------------------------------------------

template <class T>
struct BatchNormStateT {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  bool initialized = false;

  explicit BatchNormStateT(std::int64_t c = 0)
      : running_mean(static_cast<std::size_t>(c), T(0)), running_var(static_cast<std::size_t>(c), T(1)) {}
};

namespace detail {

template <class T>
ValueT<T> batchnorm_node(ValueT<T> x, ValueT<T> gamma, ValueT<T> beta, const std::vector<T>& mean,
                         const std::vector<T>& var, bool batch_stats, T eps) {
  const std::int64_t bsz = x.shape()[0], C = x.shape()[1];
  const auto& xd = x.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();

  std::vector<T> inv_std(static_cast<std::size_t>(C));
  for (std::int64_t j = 0; j < C; ++j)
    inv_std[static_cast<std::size_t>(j)] = T(1) / std::sqrt(var[static_cast<std::size_t>(j)] + eps);

  std::vector<T> xhat(xd.size());
  std::vector<T> out(xd.size());
  for (std::int64_t i = 0; i < bsz; ++i)
    for (std::int64_t j = 0; j < C; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i * C + j);
      xhat[idx] = (xd[idx] - mean[static_cast<std::size_t>(j)]) * inv_std[static_cast<std::size_t>(j)];
      out[idx] = gd[static_cast<std::size_t>(j)] * xhat[idx] + bd[static_cast<std::size_t>(j)];
    }

  NodeT<T>& n = x.tape->record("batchnorm", TensorT<T>(x.shape(), std::move(out)),
                               {x.node, gamma.node, beta.node});
  n.backward = [bsz, C, batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](NodeT<T>& self) {
    const auto& gd = self.inputs[1]->val().data;
    const auto& G = self.adjoint;
    auto* gx = adj(self.inputs[0]);
    auto* gg = adj(self.inputs[1]);
    auto* gb = adj(self.inputs[2]);
    if (gg || gb) {
      for (std::int64_t i = 0; i < bsz; ++i)
        for (std::int64_t j = 0; j < C; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i * C + j);
          if (gg) (*gg)[static_cast<std::size_t>(j)] += G[idx] * xhat[idx];
          if (gb) (*gb)[static_cast<std::size_t>(j)] += G[idx];
        }
    }
    if (!gx) return;
    if (!batch_stats) {
      // Running statistics are constants: the map is elementwise affine.
      for (std::int64_t i = 0; i < bsz; ++i)
        for (std::int64_t j = 0; j < C; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i * C + j);
          (*gx)[idx] += G[idx] * gd[static_cast<std::size_t>(j)] * inv_std[static_cast<std::size_t>(j)];
        }
      return;
    }
    // Batch-statistics mode couples every row of a feature column.
    std::vector<T> sum_dy(static_cast<std::size_t>(C), T(0));
    std::vector<T> sum_dy_xhat(static_cast<std::size_t>(C), T(0));
    for (std::int64_t i = 0; i < bsz; ++i)
      for (std::int64_t j = 0; j < C; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i * C + j);
        sum_dy[static_cast<std::size_t>(j)] += G[idx];
        sum_dy_xhat[static_cast<std::size_t>(j)] += G[idx] * xhat[idx];
      }
    const T invB = T(1) / static_cast<T>(bsz);
    for (std::int64_t i = 0; i < bsz; ++i)
      for (std::int64_t j = 0; j < C; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i * C + j);
        const std::size_t jj = static_cast<std::size_t>(j);
        (*gx)[idx] += gd[jj] * inv_std[jj] * (G[idx] - invB * sum_dy[jj] - xhat[idx] * invB * sum_dy_xhat[jj]);
      }
  };
  return {x.tape, &n};
}

}  // namespace detail

// Batch-statistics normalization of x {B,C} per feature, with the biased
// (1/B) variance. When `update` is given (training) the running accumulators
// are advanced by `momentum`; validation passes nullptr so repeated passes
// mutate nothing.
template <class T>
ValueT<T> batchnorm_batch_stats(ValueT<T> x, ValueT<T> gamma, ValueT<T> beta,
                                BatchNormStateT<T>* update, T momentum, T eps) {
  detail::same_tape("batchnorm", x, gamma);
  detail::same_tape("batchnorm", x, beta);
  detail::require(x.shape().size() == 2, "batchnorm", "input must be 2-D, got " + shape_str(x.shape()));
  const std::int64_t bsz = x.shape()[0], C = x.shape()[1];
  detail::require(gamma.shape() == Shape{C} && beta.shape() == Shape{C}, "batchnorm",
                  "scale/shift shapes " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                      " do not match input " + shape_str(x.shape()));

  const auto& xd = x.data();
  std::vector<T> mean(static_cast<std::size_t>(C), T(0));
  std::vector<T> var(static_cast<std::size_t>(C), T(0));
  for (std::int64_t i = 0; i < bsz; ++i)
    for (std::int64_t j = 0; j < C; ++j)
      mean[static_cast<std::size_t>(j)] += xd[static_cast<std::size_t>(i * C + j)];
  for (auto& v : mean) v /= static_cast<T>(bsz);
  for (std::int64_t i = 0; i < bsz; ++i)
    for (std::int64_t j = 0; j < C; ++j) {
      const T d = xd[static_cast<std::size_t>(i * C + j)] - mean[static_cast<std::size_t>(j)];
      var[static_cast<std::size_t>(j)] += d * d;
    }
  for (auto& v : var) v /= static_cast<T>(bsz);

  if (update) {
    detail::require(static_cast<std::int64_t>(update->running_mean.size()) == C, "batchnorm",
                    "state width " + std::to_string(update->running_mean.size()) +
                        " != " + std::to_string(C));
    for (std::int64_t j = 0; j < C; ++j) {
      const std::size_t jj = static_cast<std::size_t>(j);
      update->running_mean[jj] = (T(1) - momentum) * update->running_mean[jj] + momentum * mean[jj];
      update->running_var[jj] = (T(1) - momentum) * update->running_var[jj] + momentum * var[jj];
    }
    update->initialized = true;
  }
  return detail::batchnorm_node(x, gamma, beta, mean, var, /*batch_stats=*/true, eps);
}

// Inference-mode normalization using the running statistics.
template <class T>
ValueT<T> batchnorm_running(ValueT<T> x, ValueT<T> gamma, ValueT<T> beta,
                            const BatchNormStateT<T>& state, T eps) {
  detail::same_tape("batchnorm", x, gamma);
  detail::same_tape("batchnorm", x, beta);
  detail::require(x.shape().size() == 2, "batchnorm", "input must be 2-D, got " + shape_str(x.shape()));
  const std::int64_t C = x.shape()[1];
  detail::require(gamma.shape() == Shape{C} && beta.shape() == Shape{C}, "batchnorm",
                  "scale/shift shapes " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                      " do not match input " + shape_str(x.shape()));
  if (!state.initialized)
    throw std::runtime_error(
        "batchnorm: eval mode requested before any training step set running statistics");
  detail::require(static_cast<std::int64_t>(state.running_mean.size()) == C, "batchnorm",
                  "state width " + std::to_string(state.running_mean.size()) + " != " + std::to_string(C));
  return detail::batchnorm_node(x, gamma, beta, state.running_mean, state.running_var,
                                /*batch_stats=*/false, eps);
}

// ---- embeddings ------------------------------------------------------------

// Rows of table {V,e} gathered by index; gradient scatters back into the rows.
template <class T>
ValueT<T> embedding_lookup(ValueT<T> table, const std::vector<std::int32_t>& indices) {
  detail::require(table.shape().size() == 2, "embedding_lookup",
                  "table must be 2-D, got " + shape_str(table.shape()));
  detail::require(!indices.empty(), "embedding_lookup", "empty index sequence");
  const std::int64_t V = table.shape()[0], e = table.shape()[1];
  const auto& td = table.data();
  std::vector<T> out;
  out.reserve(indices.size() * static_cast<std::size_t>(e));
  for (std::int32_t idx : indices) {
    detail::require(idx >= 0 && idx < V, "embedding_lookup",
                    "index " + std::to_string(idx) + " out of range [0, " + std::to_string(V) + ")");
    out.insert(out.end(), td.begin() + static_cast<std::ptrdiff_t>(idx * e),
               td.begin() + static_cast<std::ptrdiff_t>((idx + 1) * e));
  }
  NodeT<T>& n = table.tape->record(
      "embedding_lookup", TensorT<T>({static_cast<std::int64_t>(indices.size()), e}, std::move(out)),
      {table.node});
  n.backward = [e, indices](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    for (std::size_t t = 0; t < indices.size(); ++t)
      for (std::int64_t j = 0; j < e; ++j)
        (*g)[static_cast<std::size_t>(indices[t] * e + j)] +=
            self.adjoint[t * static_cast<std::size_t>(e) + static_cast<std::size_t>(j)];
  };
  return {table.tape, &n};
}

// ---- normalization ---------------------------------------------------------

// Row-wise unit normalization of a {n,c} matrix (or a single 1-D vector).
// A (near-)zero row signals a degenerate projection and is an error.
template <class T>
ValueT<T> l2_normalize(ValueT<T> x) {
  const bool vec = x.shape().size() == 1;
  detail::require(vec || x.shape().size() == 2, "l2_normalize",
                  "expects 1-D or 2-D input, got " + shape_str(x.shape()));
  const std::int64_t rows = vec ? 1 : x.shape()[0];
  const std::int64_t c = vec ? x.shape()[0] : x.shape()[1];
  const auto& xd = x.data();
  std::vector<T> norms(static_cast<std::size_t>(rows));
  std::vector<T> out(xd.size());
  for (std::int64_t i = 0; i < rows; ++i) {
    T acc = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      const T v = xd[static_cast<std::size_t>(i * c + j)];
      acc += v * v;
    }
    const T nrm = std::sqrt(acc);
    if (!(nrm > T(1e-12)))
      throw std::runtime_error("l2_normalize: zero vector at row " + std::to_string(i));
    norms[static_cast<std::size_t>(i)] = nrm;
    for (std::int64_t j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i * c + j)] = xd[static_cast<std::size_t>(i * c + j)] / nrm;
  }
  NodeT<T>& n = x.tape->record("l2_normalize", TensorT<T>(x.shape(), std::move(out)), {x.node});
  n.backward = [rows, c, norms = std::move(norms)](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    const auto& y = self.val().data;
    const auto& G = self.adjoint;
    for (std::int64_t i = 0; i < rows; ++i) {
      T dot = T(0);
      for (std::int64_t j = 0; j < c; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i * c + j);
        dot += G[idx] * y[idx];
      }
      const T inv = T(1) / norms[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < c; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i * c + j);
        (*g)[idx] += (G[idx] - y[idx] * dot) * inv;
      }
    }
  };
  return {x.tape, &n};
}

// ---- ranking loss ----------------------------------------------------------

// Hinge loss over a {B,B} similarity matrix sim[i][j] = S(v_i, s_j) against
// the hardest in-batch negatives. Items with equal group id are never
// negatives of each other; argmax ties break toward the lowest index. The
// result is the mean over the B positive pairs.
template <class T>
ValueT<T> hardest_negative_loss(ValueT<T> sim, const std::vector<std::int64_t>& group_ids, T margin) {
  detail::require(sim.shape().size() == 2 && sim.shape()[0] == sim.shape()[1], "hardest_negative_loss",
                  "similarity matrix must be square, got " + shape_str(sim.shape()));
  const std::int64_t bsz = sim.shape()[0];
  detail::require(static_cast<std::int64_t>(group_ids.size()) == bsz, "hardest_negative_loss",
                  "group id count " + std::to_string(group_ids.size()) + " != batch size " + std::to_string(bsz));
  detail::require(bsz >= 2, "hardest_negative_loss", "batch must hold at least 2 pairs");

  const auto& S = sim.data();
  auto at = [&](std::int64_t i, std::int64_t j) { return S[static_cast<std::size_t>(i * bsz + j)]; };

  std::vector<std::int64_t> hardest_sent(static_cast<std::size_t>(bsz), -1);
  std::vector<std::int64_t> hardest_video(static_cast<std::size_t>(bsz), -1);
  for (std::int64_t i = 0; i < bsz; ++i) {
    for (std::int64_t j = 0; j < bsz; ++j) {
      if (group_ids[static_cast<std::size_t>(j)] == group_ids[static_cast<std::size_t>(i)]) continue;
      auto& hs = hardest_sent[static_cast<std::size_t>(i)];
      if (hs < 0 || at(i, j) > at(i, hs)) hs = j;
      auto& hv = hardest_video[static_cast<std::size_t>(i)];
      if (hv < 0 || at(j, i) > at(hv, i)) hv = j;
    }
    if (hardest_sent[static_cast<std::size_t>(i)] < 0)
      throw std::runtime_error("hardest_negative_loss: pair " + std::to_string(i) +
                               " has no eligible negative (all batch items share its video id)");
  }

  T total = T(0);
  std::vector<char> active1(static_cast<std::size_t>(bsz)), active2(static_cast<std::size_t>(bsz));
  for (std::int64_t i = 0; i < bsz; ++i) {
    const T pos = at(i, i);
    const T t1 = margin + at(i, hardest_sent[static_cast<std::size_t>(i)]) - pos;
    const T t2 = margin + at(hardest_video[static_cast<std::size_t>(i)], i) - pos;
    active1[static_cast<std::size_t>(i)] = t1 > T(0);
    active2[static_cast<std::size_t>(i)] = t2 > T(0);
    if (t1 > T(0)) total += t1;
    if (t2 > T(0)) total += t2;
  }
  total /= static_cast<T>(bsz);

  NodeT<T>& n = sim.tape->record("hardest_negative_loss", TensorT<T>::scalar(total), {sim.node});
  n.backward = [bsz, hardest_sent = std::move(hardest_sent), hardest_video = std::move(hardest_video),
                active1 = std::move(active1), active2 = std::move(active2)](NodeT<T>& self) {
    auto* g = adj(self.inputs[0]);
    if (!g) return;
    const T scale = self.adjoint[0] / static_cast<T>(bsz);
    for (std::int64_t i = 0; i < bsz; ++i) {
      if (active1[static_cast<std::size_t>(i)]) {
        (*g)[static_cast<std::size_t>(i * bsz + hardest_sent[static_cast<std::size_t>(i)])] += scale;
        (*g)[static_cast<std::size_t>(i * bsz + i)] -= scale;
      }
      if (active2[static_cast<std::size_t>(i)]) {
        (*g)[static_cast<std::size_t>(hardest_video[static_cast<std::size_t>(i)] * bsz + i)] += scale;
        (*g)[static_cast<std::size_t>(i * bsz + i)] -= scale;
      }
    }
  };
  return {sim.tape, &n};
}

}  // namespace dualenc::ad
