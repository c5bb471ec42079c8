#ifndef IPRM_NUMERICS_OPS_HPP_
#define IPRM_NUMERICS_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "iprm/numerics/tensor.hpp"

namespace iprm {

/// Additive penalty applied to blocked attention positions before softmax.
inline constexpr double kMaskPenalty = 1e30;

namespace detail {

inline std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

/// Element strides of `in` when broadcast against output shape `out`
/// (zero along broadcast dimensions).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t d_in = in.size() - 1 - i;
    const std::size_t d_out = r - 1 - i;
    strides[d_out] = in[d_in] == 1 ? 0 : stride;
    stride *= in[d_in];
  }
  return strides;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) +
                       " are not broadcast-compatible");
    }
    out[r - 1 - i] = da == 1 ? db : da;
  }
  return out;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

inline BroadcastPlan make_plan(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out = broadcast_shape(a, b);
  p.same = a == b;
  p.stride_a = broadcast_strides(a, p.out);
  p.stride_b = broadcast_strides(b, p.out);
  return p;
}

/// Calls row(o, a, sa, b, sb, n) for each contiguous output run: outputs
/// o..o+n-1 read a + j*sa and b + j*sb.
template <class F>
void for_each_broadcast_row(const BroadcastPlan& p, F&& row) {
  const std::size_t total = numel(p.out);
  if (total == 0) return;
  if (p.same) {
    row(std::size_t{0}, std::size_t{0}, std::size_t{1}, std::size_t{0}, std::size_t{1}, total);
    return;
  }
  const std::size_t r = p.out.size();
  if (r == 0) {
    row(std::size_t{0}, std::size_t{0}, std::size_t{0}, std::size_t{0}, std::size_t{0}, std::size_t{1});
    return;
  }
  const std::size_t inner = p.out[r - 1];
  const std::size_t sa = p.stride_a[r - 1];
  const std::size_t sb = p.stride_b[r - 1];
  const std::size_t outer = total / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t off_a = 0, off_b = 0, o = 0;
  for (std::size_t it = 0; it < outer; ++it) {
    row(o, off_a, sa, off_b, sb, inner);
    o += inner;
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      off_a += p.stride_a[d];
      off_b += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      off_a -= p.stride_a[d] * p.out[d];
      off_b -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

/// Calls f(out_index, a_offset, b_offset) for every output element.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  for_each_broadcast_row(p, [&](std::size_t o, std::size_t a, std::size_t sa, std::size_t b,
                                std::size_t sb, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) f(o + j, a + j * sa, b + j * sb);
  });
}

template <class Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using ConstMatMap = Eigen::Map<const RowMatrix<Real>>;
template <class Real>
using MatMap = Eigen::Map<RowMatrix<Real>>;

enum class BinaryKind { kAdd, kSub, kMul };

/// out[j] = op(a[j * sa], b[j * sb]) with the unit/zero stride cases split
/// out so the compiler can vectorize them.
template <class Real, class Op>
void strided_apply(Real* out, const Real* a, std::size_t sa, const Real* b, std::size_t sb,
                   std::size_t n, Op op) {
  if (sa == 1 && sb == 1) {
    for (std::size_t j = 0; j < n; ++j) out[j] = op(a[j], b[j]);
  } else if (sa == 1 && sb == 0) {
    const Real bv = b[0];
    for (std::size_t j = 0; j < n; ++j) out[j] = op(a[j], bv);
  } else if (sa == 0 && sb == 1) {
    const Real av = a[0];
    for (std::size_t j = 0; j < n; ++j) out[j] = op(av, b[j]);
  } else {
    for (std::size_t j = 0; j < n; ++j) out[j] = op(a[j * sa], b[j * sb]);
  }
}

/// acc[j * sa] += g[j] * (w ? w[j * sw] : 1).
template <class Real>
void strided_accumulate(Real* acc, std::size_t sa, const Real* g, const Real* w, std::size_t sw,
                        std::size_t n, Real sign) {
  if (sa == 0) {
    Real s = 0;
    if (!w) {
      for (std::size_t j = 0; j < n; ++j) s += g[j];
    } else if (sw == 1) {
      for (std::size_t j = 0; j < n; ++j) s += g[j] * w[j];
    } else {
      for (std::size_t j = 0; j < n; ++j) s += g[j] * w[j * sw];
    }
    acc[0] += sign * s;
  } else if (sa == 1) {
    if (!w) {
      for (std::size_t j = 0; j < n; ++j) acc[j] += sign * g[j];
    } else if (sw == 1) {
      for (std::size_t j = 0; j < n; ++j) acc[j] += sign * g[j] * w[j];
    } else if (sw == 0) {
      const Real wv = sign * w[0];
      for (std::size_t j = 0; j < n; ++j) acc[j] += g[j] * wv;
    } else {
      for (std::size_t j = 0; j < n; ++j) acc[j] += sign * g[j] * w[j * sw];
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) acc[j * sa] += sign * g[j] * (w ? w[j * sw] : Real(1));
  }
}

template <class Real>
Tensor<Real> binary(const Tensor<Real>& a, const Tensor<Real>& b, BinaryKind kind) {
  auto plan = make_plan(a.shape(), b.shape());
  std::vector<Real> out(numel(plan.out));
  const Real* pa = a.data().data();
  const Real* pb = b.data().data();
  Real* po = out.data();
  for_each_broadcast_row(plan, [&](std::size_t o, std::size_t ia, std::size_t sa, std::size_t ib,
                                   std::size_t sb, std::size_t n) {
    switch (kind) {
      case BinaryKind::kAdd:
        strided_apply(po + o, pa + ia, sa, pb + ib, sb, n, [](Real x, Real y) { return x + y; });
        break;
      case BinaryKind::kSub:
        strided_apply(po + o, pa + ia, sa, pb + ib, sb, n, [](Real x, Real y) { return x - y; });
        break;
      case BinaryKind::kMul:
        strided_apply(po + o, pa + ia, sa, pb + ib, sb, n, [](Real x, Real y) { return x * y; });
        break;
    }
  });
  Shape shape = plan.out;
  return Tensor<Real>::make_result(
      std::move(shape), std::move(out), {a, b},
      [plan = std::move(plan), kind](typename Tensor<Real>::Node& self) {
        auto* na = self.parents[0].get();
        auto* nb = self.parents[1].get();
        Real* ga = na->grad_ptr();
        Real* gb = nb->grad_ptr();
        const Real* g = self.grad.data();
        const bool mul = kind == BinaryKind::kMul;
        const Real* va = mul ? na->data.data() : nullptr;
        const Real* vb = mul ? nb->data.data() : nullptr;
        const Real sign_b = kind == BinaryKind::kSub ? Real(-1) : Real(1);
        for_each_broadcast_row(plan, [&](std::size_t o, std::size_t ia, std::size_t sa,
                                         std::size_t ib, std::size_t sb, std::size_t n) {
          if (ga) strided_accumulate(ga + ia, sa, g + o, mul ? vb + ib : nullptr, sb, n, Real(1));
          if (gb) strided_accumulate(gb + ib, sb, g + o, mul ? va + ia : nullptr, sa, n, sign_b);
        });
      });
}

/// Pointwise op with derivative expressed through input x and output y.
template <class Real, class F, class DF>
Tensor<Real> unary(const Tensor<Real>& x, F f, DF df) {
  std::vector<Real> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor<Real>::make_result(
      x.shape(), std::move(out), {x}, [df](typename Tensor<Real>::Node& self) {
        auto* nx = self.parents[0].get();
        Real* gx = nx->grad_ptr();
        for (std::size_t i = 0; i < self.data.size(); ++i) {
          gx[i] += self.grad[i] * df(nx->data[i], self.data[i]);
        }
      });
}

}  // namespace detail

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(a, b, detail::BinaryKind::kAdd);
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(a, b, detail::BinaryKind::kSub);
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(a, b, detail::BinaryKind::kMul);
}

template <class Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) { return add(a, b); }
template <class Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) { return sub(a, b); }
template <class Real>
Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) { return mul(a, b); }

template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real s) {
  return detail::unary<Real>(
      x, [s](Real v) { return v * s; }, [s](Real, Real) { return s; });
}

template <class Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
  return detail::unary<Real>(
      x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return Real(1) - y * y; });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  return detail::unary<Real>(
      x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  return detail::unary<Real>(
      x, [](Real v) { return v > Real(0) ? v : Real(0); },
      [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); });
}

/// Activation used for the hidden nonlinearity of the visual key MLP.
enum class Nonlinearity { kTanh, kRelu };

template <class Real>
Tensor<Real> apply(Nonlinearity kind, const Tensor<Real>& x) {
  return kind == Nonlinearity::kTanh ? tanh(x) : relu(x);
}

/// Broadcasts x to `shape`; the backward pass sums over expanded axes.
template <class Real>
Tensor<Real> broadcast_to(const Tensor<Real>& x, const Shape& shape) {
  detail::BroadcastPlan plan;
  plan.out = detail::broadcast_shape(x.shape(), shape);
  if (plan.out != shape) {
    throw ShapeError("cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  }
  plan.same = x.shape() == shape;
  plan.stride_a = detail::broadcast_strides(x.shape(), shape);
  plan.stride_b.assign(shape.size(), 0);
  std::vector<Real> out(numel(shape));
  const Real* px = x.data().data();
  detail::for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t) {
    out[o] = px[i];
  });
  return Tensor<Real>::make_result(
      shape, std::move(out), {x}, [plan](typename Tensor<Real>::Node& self) {
        Real* gx = self.parents[0]->grad_ptr();
        const Real* g = self.grad.data();
        detail::for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t) {
          gx[i] += g[o];
        });
      });
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  return Tensor<Real>::make_result(
      std::move(shape), std::move(out), {x}, [](typename Tensor<Real>::Node& self) {
        Real* gx = self.parents[0]->grad_ptr();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
      });
}

/// x[..., k] times w[k, n] -> [..., n].
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& x, const Tensor<Real>& w) {
  if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + to_string(x.shape()) + " x " +
                     to_string(w.shape()));
  }
  const std::size_t k = w.dim(0);
  const std::size_t n = w.dim(1);
  const std::size_t m = k == 0 ? 0 : x.numel() / k;
  Shape shape = x.shape();
  shape.back() = n;
  std::vector<Real> out(m * n);
  using CMap = detail::ConstMatMap<Real>;
  using MMap = detail::MatMap<Real>;
  MMap(out.data(), m, n).noalias() = CMap(x.data().data(), m, k) * CMap(w.data().data(), k, n);
  return Tensor<Real>::make_result(
      std::move(shape), std::move(out), {x, w},
      [m, k, n](typename Tensor<Real>::Node& self) {
        auto* nx = self.parents[0].get();
        auto* nw = self.parents[1].get();
        CMap g(self.grad.data(), m, n);
        if (Real* gx = nx->grad_ptr()) {
          MMap(gx, m, k).noalias() += g * CMap(nw->data.data(), k, n).transpose();
        }
        if (Real* gw = nw->grad_ptr()) {
          MMap(gw, k, n).noalias() += CMap(nx->data.data(), m, k).transpose() * g;
        }
      });
}

/// Batched product a[..., m, k] times b[..., k, n] with identical leading dims.
template <class Real>
Tensor<Real> bmm(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() < 2 || a.rank() != b.rank() || a.dim(-1) != b.dim(-2) ||
      !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    throw ShapeError("bmm shape mismatch: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  const std::size_t batch = m * k == 0 ? 0 : a.numel() / (m * k);
  Shape shape = a.shape();
  shape.back() = n;
  std::vector<Real> out(batch * m * n);
  using CMap = detail::ConstMatMap<Real>;
  using MMap = detail::MatMap<Real>;
  for (std::size_t i = 0; i < batch; ++i) {
    MMap(out.data() + i * m * n, m, n).noalias() =
        CMap(a.data().data() + i * m * k, m, k) * CMap(b.data().data() + i * k * n, k, n);
  }
  return Tensor<Real>::make_result(
      std::move(shape), std::move(out), {a, b},
      [batch, m, k, n](typename Tensor<Real>::Node& self) {
        auto* na = self.parents[0].get();
        auto* nb = self.parents[1].get();
        Real* ga = na->grad_ptr();
        Real* gb = nb->grad_ptr();
        for (std::size_t i = 0; i < batch; ++i) {
          CMap g(self.grad.data() + i * m * n, m, n);
          if (ga) {
            MMap(ga + i * m * k, m, k).noalias() +=
                g * CMap(nb->data.data() + i * k * n, k, n).transpose();
          }
          if (gb) {
            MMap(gb + i * k * n, k, n).noalias() +=
                CMap(na->data.data() + i * m * k, m, k).transpose() * g;
          }
        }
      });
}

/// Swaps the last two axes.
template <class Real>
Tensor<Real> transpose_last2(const Tensor<Real>& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2 needs rank >= 2");
  const std::size_t m = x.dim(-2), n = x.dim(-1);
  const std::size_t batch = m * n == 0 ? 0 : x.numel() / (m * n);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<Real> out(x.numel());
  const Real* px = x.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = px[b * m * n + i * n + j];
    }
  }
  return Tensor<Real>::make_result(
      std::move(shape), std::move(out), {x}, [batch, m, n](typename Tensor<Real>::Node& self) {
        Real* gx = self.parents[0]->grad_ptr();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              gx[b * m * n + i * n + j] += self.grad[b * m * n + j * m + i];
            }
          }
        }
      });
}

/// Softmax over the last axis. Positions where `mask` is 1 receive an
/// additive -1e30 before exponentiation; mask broadcasts to x.
template <class Real>
Tensor<Real> softmax_lastdim(const Tensor<Real>& x,
                             const std::optional<Tensor<Real>>& mask = std::nullopt) {
  if (x.rank() < 1 || x.dim(-1) == 0) throw ShapeError("softmax over empty axis");
  const std::size_t n = x.dim(-1);
  const std::size_t rows = x.numel() / n;
  std::vector<Real> z(x.data().begin(), x.data().end());
  std::vector<char> blocked;
  if (mask) {
    const Tensor<Real> m = broadcast_to(mask->detach(), x.shape());
    blocked.resize(z.size());
    const auto mv = m.data();
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] += mv[i] * static_cast<Real>(-kMaskPenalty);
      blocked[i] = mv[i] != Real(0);
    }
  }
  std::vector<Real> out(z.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = z.data() + r * n;
    if (!blocked.empty() &&
        std::all_of(blocked.begin() + r * n, blocked.begin() + (r + 1) * n,
                    [](char c) { return c != 0; })) {
      throw NumericalError("fully masked attention row");
    }
    const Real mx = *std::max_element(row, row + n);
    Real sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      out[r * n + j] = std::exp(row[j] - mx);
      sum += out[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= sum;
  }
  return Tensor<Real>::make_result(
      x.shape(), std::move(out), {x}, [rows, n](typename Tensor<Real>::Node& self) {
        Real* gx = self.parents[0]->grad_ptr();
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* y = self.data.data() + r * n;
          const Real* g = self.grad.data() + r * n;
          Real dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
          for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
        }
      });
}

template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  const std::size_t ax = detail::normalize_axis(axis, ref.size());
  Shape shape = ref;
  shape[ax] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == ref.size();
    for (std::size_t d = 0; ok && d < ref.size(); ++d) {
      ok = d == ax || p.shape()[d] == ref[d];
    }
    if (!ok) {
      throw ShapeError("concat dimension mismatch off axis " + std::to_string(ax) + ": " +
                       to_string(ref) + " vs " + to_string(p.shape()));
    }
    shape[ax] += p.shape()[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= ref[d];
  for (std::size_t d = ax + 1; d < ref.size(); ++d) inner *= ref[d];
  const std::size_t out_row = shape[ax] * inner;
  std::vector<Real> out(numel(shape));
  std::vector<std::size_t> widths;
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[ax] * inner;
    widths.push_back(w);
    const Real* src = p.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * w, src + (o + 1) * w, out.begin() + o * out_row + col);
    }
    col += w;
  }
  return Tensor<Real>::make_result(
      std::move(shape), std::move(out), parts,
      [outer, out_row, widths](typename Tensor<Real>::Node& self) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          const std::size_t w = widths[k];
          if (Real* g = self.parents[k]->grad_ptr()) {
            for (std::size_t o = 0; o < outer; ++o) {
              const Real* src = self.grad.data() + o * out_row + col;
              for (std::size_t j = 0; j < w; ++j) g[o * w + j] += src[j];
            }
          }
          col += w;
        }
      });
}

/// Contiguous sub-range [start, start + length) along `axis`.
template <class Real>
Tensor<Real> slice(const Tensor<Real>& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  if (start + length > x.shape()[ax]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis of size " + std::to_string(x.shape()[ax]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= x.shape()[d];
  for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  const std::size_t in_row = x.shape()[ax] * inner;
  const std::size_t w = length * inner;
  const std::size_t off = start * inner;
  Shape shape = x.shape();
  shape[ax] = length;
  std::vector<Real> out(outer * w);
  const Real* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(px + o * in_row + off, px + o * in_row + off + w, out.begin() + o * w);
  }
  return Tensor<Real>::make_result(
      std::move(shape), std::move(out), {x},
      [outer, in_row, w, off](typename Tensor<Real>::Node& self) {
        Real* gx = self.parents[0]->grad_ptr();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < w; ++j) gx[o * in_row + off + j] += self.grad[o * w + j];
        }
      });
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real total = 0;
  for (Real v : x.data()) total += v;
  return Tensor<Real>::make_result(Shape{}, {total}, {x},
                                   [](typename Tensor<Real>::Node& self) {
                                     auto* nx = self.parents[0].get();
                                     Real* gx = nx->grad_ptr();
                                     for (std::size_t i = 0; i < nx->data.size(); ++i) {
                                       gx[i] += self.grad[0];
                                     }
                                   });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

/// Sums over `axis`, removing it.
template <class Real>
Tensor<Real> sum_axis(const Tensor<Real>& x, int axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= x.shape()[d];
  for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  const std::size_t len = x.shape()[ax];
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<Real> out(outer * inner, Real(0));
  const Real* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += px[(o * len + l) * inner + i];
    }
  }
  return Tensor<Real>::make_result(
      std::move(shape), std::move(out), {x},
      [outer, inner, len](typename Tensor<Real>::Node& self) {
        Real* gx = self.parents[0]->grad_ptr();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t l = 0; l < len; ++l) {
            for (std::size_t i = 0; i < inner; ++i) {
              gx[(o * len + l) * inner + i] += self.grad[o * inner + i];
            }
          }
        }
      });
}

/// Row lookup: ids index rows of table[V, d]; result has shape ids_shape + [d].
template <class Real>
Tensor<Real> embedding(const Tensor<Real>& table, const std::vector<std::int64_t>& ids,
                       Shape ids_shape) {
  if (table.rank() != 2) throw ShapeError("embedding table must be rank 2");
  if (numel(ids_shape) != ids.size()) throw ShapeError("embedding ids/shape mismatch");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
  }
  ids_shape.push_back(d);
  std::vector<Real> out(ids.size() * d);
  const Real* pt = table.data().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy(pt + ids[i] * d, pt + (ids[i] + 1) * d, out.begin() + i * d);
  }
  return Tensor<Real>::make_result(
      std::move(ids_shape), std::move(out), {table},
      [ids, d](typename Tensor<Real>::Node& self) {
        Real* gt = self.parents[0]->grad_ptr();
        for (std::size_t i = 0; i < ids.size(); ++i) {
          for (std::size_t j = 0; j < d; ++j) gt[ids[i] * d + j] += self.grad[i * d + j];
        }
      });
}

/// Mean softmax cross-entropy of logits[b, C] against integer targets.
template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, const std::vector<std::int64_t>& targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("cross_entropy expects logits [b, C] matching " +
                     std::to_string(targets.size()) + " targets, got " +
                     to_string(logits.shape()));
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  std::vector<Real> probs(b * c);
  Real loss = 0;
  const Real* pl = logits.data().data();
  for (std::size_t i = 0; i < b; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
      throw std::out_of_range("cross_entropy target out of range");
    }
    const Real* row = pl + i * c;
    const Real mx = *std::max_element(row, row + c);
    Real s = 0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      s += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= s;
    loss += -(row[targets[i]] - mx - std::log(s));
  }
  loss /= static_cast<Real>(b);
  return Tensor<Real>::make_result(
      Shape{}, {loss}, {logits},
      [probs = std::move(probs), targets, b, c](typename Tensor<Real>::Node& self) {
        Real* gl = self.parents[0]->grad_ptr();
        const Real g = self.grad[0] / static_cast<Real>(b);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const Real onehot = static_cast<std::size_t>(targets[i]) == j ? Real(1) : Real(0);
            gl[i * c + j] += g * (probs[i * c + j] - onehot);
          }
        }
      });
}

/// Layer normalization over the last axis with affine gamma/beta of size d.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, Real eps = Real(1e-5)) {
  const std::size_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) throw ShapeError("layer_norm affine size mismatch");
  const std::size_t rows = x.numel() / d;
  std::vector<Real> xhat(x.numel()), inv_std(rows), out(x.numel());
  const Real* px = x.data().data();
  const Real* pg = gamma.data().data();
  const Real* pb = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    Real mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += px[r * d + j];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (px[r * d + j] - mu) * (px[r * d + j] - mu);
    var /= static_cast<Real>(d);
    inv_std[r] = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (px[r * d + j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * pg[j] + pb[j];
    }
  }
  return Tensor<Real>::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
       d](typename Tensor<Real>::Node& self) {
        Real* gx = self.parents[0]->grad_ptr();
        Real* gg = self.parents[1]->grad_ptr();
        Real* gb = self.parents[2]->grad_ptr();
        const Real* gamma_v = self.parents[1]->data.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* g = self.grad.data() + r * d;
          const Real* xh = xhat.data() + r * d;
          Real s1 = 0, s2 = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const Real dxh = g[j] * gamma_v[j];
            s1 += dxh;
            s2 += dxh * xh[j];
            if (gg) gg[j] += g[j] * xh[j];
            if (gb) gb[j] += g[j];
          }
          if (gx) {
            for (std::size_t j = 0; j < d; ++j) {
              const Real dxh = g[j] * gamma_v[j];
              gx[r * d + j] += inv_std[r] *
                               (dxh - s1 / static_cast<Real>(d) - xh[j] * s2 / static_cast<Real>(d));
            }
          }
        }
      });
}

}  // namespace iprm

#endif  // IPRM_NUMERICS_OPS_HPP_
