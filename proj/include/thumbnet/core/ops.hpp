#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/finite.hpp"
#include "thumbnet/core/shape.hpp"
#include "thumbnet/core/tape.hpp"
#include "thumbnet/core/tensor.hpp"

namespace thumbnet {

namespace detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Pairwise broadcast plan (trailing-dimension alignment). Strides are in
// elements and zero along broadcast dimensions.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_strides;
  std::vector<std::size_t> b_strides;
  bool same_shape = false;
};

inline BroadcastPlan make_broadcast_plan(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  plan.same_shape = (a == b);
  const std::size_t rank = std::max(a.rank(), b.rank());
  std::vector<std::size_t> dims(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.rank() ? a[a.rank() - 1 - i] : 1;
    const std::size_t db = i < b.rank() ? b[b.rank() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw GeometryError("broadcast: shapes " + a.str() + " and " + b.str() +
                          " are incompatible");
    }
    dims[rank - 1 - i] = std::max(da, db);
  }
  plan.out = Shape(dims);
  auto aligned_strides = [&](const Shape& s) {
    std::vector<std::size_t> st(rank, 0);
    const auto own = s.strides();
    for (std::size_t i = 0; i < s.rank(); ++i) {
      const std::size_t axis = rank - s.rank() + i;
      st[axis] = (s[i] == 1 && plan.out[axis] != 1) ? 0 : own[i];
    }
    return st;
  };
  plan.a_strides = aligned_strides(a);
  plan.b_strides = aligned_strides(b);
  return plan;
}

// Odometer walk over the broadcast output; calls f(out_flat, a_off, b_off).
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t n = plan.out.numel();
  const std::size_t rank = plan.out.rank();
  if (rank == 0) {
    if (n) f(std::size_t(0), std::size_t(0), std::size_t(0));
    return;
  }
  std::vector<std::size_t> coord(rank, 0);
  std::size_t aoff = 0, boff = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    f(flat, aoff, boff);
    for (std::size_t d = rank; d-- > 0;) {
      ++coord[d];
      aoff += plan.a_strides[d];
      boff += plan.b_strides[d];
      if (coord[d] < plan.out[d]) break;
      aoff -= plan.a_strides[d] * plan.out[d];
      boff -= plan.b_strides[d] * plan.out[d];
      coord[d] = 0;
    }
  }
}

// Records a binary broadcasting op. da/db compute the local gradient factor
// given (upstream value, a value, b value).
template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> broadcast_binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd,
                           DA da, DB db) {
  const BroadcastPlan plan = make_broadcast_plan(a.shape(), b.shape());
  Tensor<T> out(plan.out);
  T* o = out.mutable_data();
  const T* pa = a.data();
  const T* pb = b.data();
  if (plan.same_shape) {
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) o[i] = fwd(pa[i], pb[i]);
  } else {
    for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      o[i] = fwd(pa[ia], pb[ib]);
    });
  }
  check_finite(out, name);

  auto core = result_core<T>({&a, &b});
  if (core) {
    const std::int64_t na = node_on(core, a);
    const std::int64_t nb = node_on(core, b);
    Tensor<T> ca = a.detached(), cb = b.detached(), cout = out.detached();
    std::int64_t id =
        core->emit(plan.out, [=](TapeCore<T>& tc, const std::vector<T>& up) {
          const T* qa = ca.data();
          const T* qb = cb.data();
          std::vector<T> ga, gb;
          if (na >= 0) ga.assign(ca.numel(), T(0));
          if (nb >= 0) gb.assign(cb.numel(), T(0));
          if (plan.same_shape) {
            for (std::size_t i = 0; i < up.size(); ++i) {
              if (na >= 0) ga[i] += da(up[i], qa[i], qb[i]);
              if (nb >= 0) gb[i] += db(up[i], qa[i], qb[i]);
            }
          } else {
            for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
              if (na >= 0) ga[ia] += da(up[i], qa[ia], qb[ib]);
              if (nb >= 0) gb[ib] += db(up[i], qa[ia], qb[ib]);
            });
          }
          if (na >= 0) tc.accumulate(na, ga.data(), ga.size());
          if (nb >= 0) tc.accumulate(nb, gb.data(), gb.size());
        });
    out.detail_link(core, id, true);
  }
  return out;
}

// Records a unary elementwise op. dfn maps (upstream, input, output) to the
// input gradient.
template <typename T, typename Fwd, typename Dfn>
Tensor<T> unary_elementwise(const char* name, const Tensor<T>& a, Fwd fwd, Dfn dfn) {
  Tensor<T> out(a.shape());
  T* o = out.mutable_data();
  const T* pa = a.data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) o[i] = fwd(pa[i]);
  check_finite(out, name);

  auto core = result_core<T>({&a});
  if (core) {
    const std::int64_t na = node_on(core, a);
    Tensor<T> ca = a.detached(), cout = out.detached();
    std::int64_t id = core->emit(a.shape(), [=](TapeCore<T>& tc, const std::vector<T>& up) {
      const T* qa = ca.data();
      const T* qo = cout.data();
      std::vector<T> g(up.size());
      for (std::size_t i = 0; i < up.size(); ++i) g[i] = dfn(up[i], qa[i], qo[i]);
      tc.accumulate(na, g.data(), g.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

}  // namespace detail

// ---- elementwise arithmetic (NumPy-style broadcasting) ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T u, T, T) { return u; },
      [](T u, T, T) { return u; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T u, T, T) { return u; },
      [](T u, T, T) { return -u; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T u, T, T y) { return u * y; },
      [](T u, T x, T) { return u * x; });
}

// Elementwise maximum. On ties the subgradient goes to the first argument.
template <typename T>
Tensor<T> elem_max(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary<T>(
      "max", a, b, [](T x, T y) { return x >= y ? x : y; },
      [](T u, T x, T y) { return x >= y ? u : T(0); },
      [](T u, T x, T y) { return x >= y ? T(0) : u; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::unary_elementwise<T>(
      "scale", a, [c](T x) { return c * x; }, [c](T u, T, T) { return c * u; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::unary_elementwise<T>(
      "add_scalar", a, [c](T x) { return x + c; }, [](T u, T, T) { return u; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

// ---- transcendental / power ----

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary_elementwise<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T u, T, T y) { return u * y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary_elementwise<T>(
      "log", a, [](T x) { return std::log(x); }, [](T u, T x, T) { return u / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary_elementwise<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](T u, T, T y) { return u / (T(2) * y); });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T p) {
  return detail::unary_elementwise<T>(
      "pow", a, [p](T x) { return std::pow(x, p); },
      [p](T u, T x, T) { return u * p * std::pow(x, p - T(1)); });
}

// Rectifier. The subgradient at zero is zero.
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_elementwise<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T u, T x, T) { return x > T(0) ? u : T(0); });
}

// ---- structure ----

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  Tensor<T> out = a.reshaped(std::move(shape));
  auto core = detail::result_core<T>({&a});
  if (core) {
    const std::int64_t na = detail::node_on(core, a);
    std::int64_t id = core->emit(out.shape(), [na](TapeCore<T>& tc, const std::vector<T>& up) {
      tc.accumulate(na, up.data(), up.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  require_rank(a.shape(), 2, "transpose");
  const std::size_t r = a.size(0), c = a.size(1);
  Tensor<T> out(Shape{c, r});
  T* o = out.mutable_data();
  const T* p = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o[j * r + i] = p[i * c + j];
  auto core = detail::result_core<T>({&a});
  if (core) {
    const std::int64_t na = detail::node_on(core, a);
    std::int64_t id = core->emit(out.shape(), [=](TapeCore<T>& tc, const std::vector<T>& up) {
      std::vector<T> g(r * c);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] = up[j * r + i];
      tc.accumulate(na, g.data(), g.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, Shape shape) {
  const detail::BroadcastPlan plan = detail::make_broadcast_plan(a.shape(), shape);
  if (plan.out != shape) {
    throw GeometryError("broadcast_to: cannot expand " + a.shape().str() + " to " + shape.str());
  }
  Tensor<T> out(shape);
  T* o = out.mutable_data();
  const T* p = a.data();
  detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) { o[i] = p[ia]; });
  auto core = detail::result_core<T>({&a});
  if (core) {
    const std::int64_t na = detail::node_on(core, a);
    Tensor<T> ca = a.detached();
    std::int64_t id = core->emit(shape, [=](TapeCore<T>& tc, const std::vector<T>& up) {
      std::vector<T> g(ca.numel(), T(0));
      detail::for_each_broadcast(plan,
                                 [&](std::size_t i, std::size_t ia, std::size_t) { g[ia] += up[i]; });
      tc.accumulate(na, g.data(), g.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

// ---- reductions ----

namespace detail {

inline void normalize_axes(const Shape& s, std::vector<std::size_t>& axes) {
  if (axes.empty()) {
    axes.resize(s.rank());
    for (std::size_t i = 0; i < s.rank(); ++i) axes[i] = i;
    return;
  }
  std::sort(axes.begin(), axes.end());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= s.rank()) throw GeometryError("reduce: axis out of range for " + s.str());
    if (i && axes[i] == axes[i - 1]) throw GeometryError("reduce: repeated axis");
  }
}

struct ReducePlan {
  Shape out;                             // result shape (keepdims applied)
  std::vector<std::size_t> map_strides;  // input-aligned strides into out
  std::size_t count = 1;                 // reduced element count per output
};

inline ReducePlan make_reduce_plan(const Shape& in, std::vector<std::size_t> axes, bool keepdims) {
  normalize_axes(in, axes);
  ReducePlan plan;
  std::vector<bool> reduced(in.rank(), false);
  for (std::size_t a : axes) {
    reduced[a] = true;
    plan.count *= in[a];
  }
  std::vector<std::size_t> kept_dims;
  std::vector<std::size_t> full_dims(in.rank());
  for (std::size_t i = 0; i < in.rank(); ++i) {
    full_dims[i] = reduced[i] ? 1 : in[i];
    if (!reduced[i]) kept_dims.push_back(in[i]);
  }
  plan.out = keepdims ? Shape(full_dims) : Shape(kept_dims);
  // Strides of the (keepdims) result aligned to input axes, 0 on reduced axes.
  Shape full(full_dims);
  const auto fs = full.strides();
  plan.map_strides.assign(in.rank(), 0);
  for (std::size_t i = 0; i < in.rank(); ++i) plan.map_strides[i] = reduced[i] ? 0 : fs[i];
  return plan;
}

// Walks the input and calls f(in_flat, out_off).
template <typename F>
void for_each_reduce(const Shape& in, const ReducePlan& plan, F&& f) {
  const std::size_t n = in.numel();
  const std::size_t rank = in.rank();
  if (rank == 0) {
    if (n) f(std::size_t(0), std::size_t(0));
    return;
  }
  std::vector<std::size_t> coord(rank, 0);
  std::size_t ooff = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    f(flat, ooff);
    for (std::size_t d = rank; d-- > 0;) {
      ++coord[d];
      ooff += plan.map_strides[d];
      if (coord[d] < in[d]) break;
      ooff -= plan.map_strides[d] * in[d];
      coord[d] = 0;
    }
  }
}

template <typename T>
Tensor<T> reduce_impl(const char* name, const Tensor<T>& a, std::vector<std::size_t> axes,
                      bool keepdims, bool mean) {
  const ReducePlan plan = make_reduce_plan(a.shape(), axes, keepdims);
  Tensor<T> out(plan.out);
  T* o = out.mutable_data();
  const T* p = a.data();
  for_each_reduce(a.shape(), plan, [&](std::size_t i, std::size_t oo) { o[oo] += p[i]; });
  const T inv = mean ? T(1) / static_cast<T>(plan.count) : T(1);
  if (mean) {
    for (std::size_t i = 0; i < out.numel(); ++i) o[i] *= inv;
  }
  check_finite(out, name, /*full_scan=*/true);

  auto core = result_core<T>({&a});
  if (core) {
    const std::int64_t na = node_on(core, a);
    const Shape in_shape = a.shape();
    std::int64_t id = core->emit(plan.out, [=](TapeCore<T>& tc, const std::vector<T>& up) {
      std::vector<T> g(in_shape.numel());
      for_each_reduce(in_shape, plan, [&](std::size_t i, std::size_t oo) { g[i] = up[oo] * inv; });
      tc.accumulate(na, g.data(), g.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

}  // namespace detail

// Sum over the given axes (all axes when empty; scalar result unless keepdims).
template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a, std::vector<std::size_t> axes = {}, bool keepdims = false) {
  return detail::reduce_impl("reduce_sum", a, std::move(axes), keepdims, /*mean=*/false);
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, std::vector<std::size_t> axes = {},
                      bool keepdims = false) {
  return detail::reduce_impl("reduce_mean", a, std::move(axes), keepdims, /*mean=*/true);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  return reduce_sum(a);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return reduce_mean(a);
}

// ---- linear algebra ----

// [M,K] x [K,N] -> [M,N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw GeometryError("matmul: inner dimensions differ, " + a.shape().str() + " x " +
                        b.shape().str());
  }
  Tensor<T> out(Shape{m, n});
  {
    detail::ConstMatMap<T> ma(a.data(), m, k);
    detail::ConstMatMap<T> mb(b.data(), k, n);
    detail::MatMap<T> mo(out.mutable_data(), m, n);
    mo.noalias() = ma * mb;
  }
  check_finite(out, "matmul");

  auto core = detail::result_core<T>({&a, &b});
  if (core) {
    const std::int64_t na = detail::node_on(core, a);
    const std::int64_t nb = detail::node_on(core, b);
    Tensor<T> ca = a.detached(), cb = b.detached();
    std::int64_t id =
        core->emit(out.shape(), [=](TapeCore<T>& tc, const std::vector<T>& up) {
          detail::ConstMatMap<T> mu(up.data(), m, n);
          if (na >= 0) {
            std::vector<T> g(m * k);
            detail::MatMap<T> mg(g.data(), m, k);
            detail::ConstMatMap<T> mb(cb.data(), k, n);
            mg.noalias() = mu * mb.transpose();
            tc.accumulate(na, g.data(), g.size());
          }
          if (nb >= 0) {
            std::vector<T> g(k * n);
            detail::MatMap<T> mg(g.data(), k, n);
            detail::ConstMatMap<T> ma(ca.data(), m, k);
            mg.noalias() = ma.transpose() * mu;
            tc.accumulate(nb, g.data(), g.size());
          }
        });
    out.detail_link(core, id, true);
  }
  return out;
}

// Row-wise softmax on [N,K], numerically stabilized by the row maximum.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  require_rank(a.shape(), 2, "softmax");
  const std::size_t n = a.size(0), k = a.size(1);
  Tensor<T> out(a.shape());
  T* o = out.mutable_data();
  const T* p = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = p + i * k;
    T* orow = o + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < k; ++j) orow[j] /= sum;
  }
  check_finite(out, "softmax");

  auto core = detail::result_core<T>({&a});
  if (core) {
    const std::int64_t na = detail::node_on(core, a);
    Tensor<T> cout = out.detached();
    std::int64_t id = core->emit(a.shape(), [=](TapeCore<T>& tc, const std::vector<T>& up) {
      const T* y = cout.data();
      std::vector<T> g(n * k);
      for (std::size_t i = 0; i < n; ++i) {
        const T* yrow = y + i * k;
        const T* urow = up.data() + i * k;
        T dot = T(0);
        for (std::size_t j = 0; j < k; ++j) dot += urow[j] * yrow[j];
        T* grow = g.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) grow[j] = yrow[j] * (urow[j] - dot);
      }
      tc.accumulate(na, g.data(), g.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

}  // namespace thumbnet
