#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <vector>

#include "thumbnet/core/finite.hpp"
#include "thumbnet/core/ops.hpp"
#include "thumbnet/core/parallel.hpp"
#include "thumbnet/core/tape.hpp"
#include "thumbnet/core/tensor.hpp"
#include "thumbnet/layers/spec.hpp"

namespace thumbnet {

namespace detail {

// Patch geometry shared by convolution and its adjoint. "big" is the side
// the k x k windows slide over, "small" the side with one point per window.
struct PatchGeom {
  std::size_t channels, big_h, big_w;
  std::size_t k, stride, pad;
  std::size_t small_h, small_w;
  std::size_t col_rows() const { return channels * k * k; }
  std::size_t col_cols() const { return small_h * small_w; }
};

// col[(c*k+ki)*k+kj, oh*small_w+ow] = src[c, oh*stride+ki-pad, ow*stride+kj-pad], 0 outside.
template <typename T>
void im2col(const PatchGeom& g, const T* src, T* col) {
  const std::ptrdiff_t bh = static_cast<std::ptrdiff_t>(g.big_h);
  const std::ptrdiff_t bw = static_cast<std::ptrdiff_t>(g.big_w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = src + c * g.big_h * g.big_w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj, ++row) {
        T* out = col + row * g.col_cols();
        for (std::size_t oh = 0; oh < g.small_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          T* orow = out + oh * g.small_w;
          if (ih < 0 || ih >= bh) {
            for (std::size_t ow = 0; ow < g.small_w; ++ow) orow[ow] = T(0);
            continue;
          }
          const T* irow = plane + static_cast<std::size_t>(ih) * g.big_w;
          for (std::size_t ow = 0; ow < g.small_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            orow[ow] = (iw < 0 || iw >= bw) ? T(0) : irow[static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back onto the big side.
template <typename T>
void col2im_add(const PatchGeom& g, const T* col, T* dst) {
  const std::ptrdiff_t bh = static_cast<std::ptrdiff_t>(g.big_h);
  const std::ptrdiff_t bw = static_cast<std::ptrdiff_t>(g.big_w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = dst + c * g.big_h * g.big_w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj, ++row) {
        const T* in = col + row * g.col_cols();
        for (std::size_t oh = 0; oh < g.small_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= bh) continue;
          const T* irow = in + oh * g.small_w;
          T* orow = plane + static_cast<std::size_t>(ih) * g.big_w;
          for (std::size_t ow = 0; ow < g.small_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iw >= 0 && iw < bw) orow[static_cast<std::size_t>(iw)] += irow[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void require_conv_inputs(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                         std::size_t w_in_axis, std::size_t w_out_axis, const char* what) {
  require_rank(x.shape(), 4, what);
  require_rank(w.shape(), 4, what);
  if (x.size(1) != w.size(w_in_axis)) {
    throw GeometryError(std::string(what) + ": input has " + std::to_string(x.size(1)) +
                        " channels, weights expect " + std::to_string(w.size(w_in_axis)));
  }
  if (w.size(2) != w.size(3)) {
    throw GeometryError(std::string(what) + ": non-square kernel " + w.shape().str());
  }
  if (!bias.empty() && (bias.rank() != 1 || bias.size(0) != w.size(w_out_axis))) {
    throw GeometryError(std::string(what) + ": bias shape " + bias.shape().str() +
                        " does not match " + std::to_string(w.size(w_out_axis)) + " channels");
  }
}

}  // namespace detail

// 2-D cross-correlation over NCHW input with weights [out, in, k, k] and an
// optional bias [out]. Differentiable with respect to input, weights, bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  detail::require_conv_inputs(x, w, bias, 1, 0, "conv2d");
  const std::size_t n = x.size(0), ic = x.size(1), h = x.size(2), iw = x.size(3);
  const std::size_t oc = w.size(0), k = w.size(2);
  const std::size_t oh = detail::conv_extent(h, k, stride, pad, "conv2d");
  const std::size_t ow = detail::conv_extent(iw, k, stride, pad, "conv2d");

  const detail::PatchGeom geom{ic, h, iw, k, stride, pad, oh, ow};
  const std::size_t kk = geom.col_rows();  // ic*k*k
  const std::size_t pp = geom.col_cols();  // oh*ow

  Tensor<T> out(Shape{n, oc, oh, ow});
  {
    T* optr = out.mutable_data();
    const T* xptr = x.data();
    const T* wptr = w.data();
    const T* bptr = bias.empty() ? nullptr : bias.data();
    parallel_for(n, [&](std::size_t b, std::size_t e) {
      std::vector<T> col(kk * pp);
      detail::ConstMatMap<T> wm(wptr, oc, kk);
      for (std::size_t i = b; i < e; ++i) {
        detail::im2col(geom, xptr + i * ic * h * iw, col.data());
        detail::ConstMatMap<T> cm(col.data(), kk, pp);
        detail::MatMap<T> om(optr + i * oc * pp, oc, pp);
        om.noalias() = wm * cm;
        if (bptr) {
          for (std::size_t c = 0; c < oc; ++c) om.row(c).array() += bptr[c];
        }
      }
    });
  }
  check_finite(out, "conv2d");

  auto core = detail::result_core<T>({&x, &w, &bias});
  if (core) {
    const std::int64_t nx = detail::node_on(core, x);
    const std::int64_t nw = detail::node_on(core, w);
    const std::int64_t nb = detail::node_on(core, bias);
    Tensor<T> cx = x.detached(), cw = w.detached();
    std::int64_t id = core->emit(out.shape(), [=](TapeCore<T>& tc, const std::vector<T>& up) {
      const T* xptr = cx.data();
      const T* wptr = cw.data();
      std::vector<T> col(kk * pp);
      std::vector<T> dw, dx, dcol;
      if (nw >= 0) dw.assign(oc * kk, T(0));
      if (nx >= 0) {
        dx.assign(n * ic * h * iw, T(0));
        dcol.resize(kk * pp);
      }
      for (std::size_t i = 0; i < n; ++i) {
        detail::ConstMatMap<T> um(up.data() + i * oc * pp, oc, pp);
        if (nw >= 0) {
          detail::im2col(geom, xptr + i * ic * h * iw, col.data());
          detail::ConstMatMap<T> cm(col.data(), kk, pp);
          detail::MatMap<T> dwm(dw.data(), oc, kk);
          dwm.noalias() += um * cm.transpose();
        }
        if (nx >= 0) {
          detail::ConstMatMap<T> wm(wptr, oc, kk);
          detail::MatMap<T> dcm(dcol.data(), kk, pp);
          dcm.noalias() = wm.transpose() * um;
          detail::col2im_add(geom, dcol.data(), dx.data() + i * ic * h * iw);
        }
      }
      if (nb >= 0) {
        std::vector<T> db(oc, T(0));
        for (std::size_t i = 0; i < n; ++i) {
          const T* u = up.data() + i * oc * pp;
          for (std::size_t c = 0; c < oc; ++c) {
            T s = T(0);
            for (std::size_t p = 0; p < pp; ++p) s += u[c * pp + p];
            db[c] += s;
          }
        }
        tc.accumulate(nb, db.data(), db.size());
      }
      if (nw >= 0) tc.accumulate(nw, dw.data(), dw.size());
      if (nx >= 0) tc.accumulate(nx, dx.data(), dx.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

// Transposed convolution (the adjoint of conv2d) over NCHW input with
// weights [in, out, k, k]. Output extent is (m-1)*stride - 2*pad + k.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                   std::size_t stride, std::size_t pad) {
  detail::require_conv_inputs(x, w, bias, 0, 1, "deconv2d");
  const std::size_t n = x.size(0), ic = x.size(1), h = x.size(2), iw = x.size(3);
  const std::size_t oc = w.size(1), k = w.size(2);
  const std::size_t oh = detail::deconv_extent(h, k, stride, pad, "deconv2d");
  const std::size_t ow = detail::deconv_extent(iw, k, stride, pad, "deconv2d");

  // The windows slide over the (big) output side; x lives on the small side.
  const detail::PatchGeom geom{oc, oh, ow, k, stride, pad, h, iw};
  const std::size_t kk = geom.col_rows();  // oc*k*k
  const std::size_t pp = geom.col_cols();  // h*iw

  Tensor<T> out(Shape{n, oc, oh, ow});
  {
    T* optr = out.mutable_data();
    const T* xptr = x.data();
    const T* wptr = w.data();
    const T* bptr = bias.empty() ? nullptr : bias.data();
    parallel_for(n, [&](std::size_t b, std::size_t e) {
      std::vector<T> col(kk * pp);
      detail::ConstMatMap<T> wm(wptr, ic, kk);
      for (std::size_t i = b; i < e; ++i) {
        detail::ConstMatMap<T> xm(xptr + i * ic * pp, ic, pp);
        detail::MatMap<T> cm(col.data(), kk, pp);
        cm.noalias() = wm.transpose() * xm;
        T* oimg = optr + i * oc * oh * ow;
        detail::col2im_add(geom, col.data(), oimg);
        if (bptr) {
          for (std::size_t c = 0; c < oc; ++c) {
            T* plane = oimg + c * oh * ow;
            for (std::size_t p = 0; p < oh * ow; ++p) plane[p] += bptr[c];
          }
        }
      }
    });
  }
  check_finite(out, "deconv2d");

  auto core = detail::result_core<T>({&x, &w, &bias});
  if (core) {
    const std::int64_t nx = detail::node_on(core, x);
    const std::int64_t nw = detail::node_on(core, w);
    const std::int64_t nb = detail::node_on(core, bias);
    Tensor<T> cx = x.detached(), cw = w.detached();
    std::int64_t id = core->emit(out.shape(), [=](TapeCore<T>& tc, const std::vector<T>& up) {
      const T* xptr = cx.data();
      const T* wptr = cw.data();
      std::vector<T> col(kk * pp);
      std::vector<T> dw, dx;
      if (nw >= 0) dw.assign(ic * kk, T(0));
      if (nx >= 0) dx.assign(n * ic * pp, T(0));
      for (std::size_t i = 0; i < n; ++i) {
        detail::im2col(geom, up.data() + i * oc * oh * ow, col.data());
        detail::ConstMatMap<T> cm(col.data(), kk, pp);
        if (nx >= 0) {
          detail::ConstMatMap<T> wm(wptr, ic, kk);
          detail::MatMap<T> dxm(dx.data() + i * ic * pp, ic, pp);
          dxm.noalias() = wm * cm;
        }
        if (nw >= 0) {
          detail::ConstMatMap<T> xm(xptr + i * ic * pp, ic, pp);
          detail::MatMap<T> dwm(dw.data(), ic, kk);
          dwm.noalias() += xm * cm.transpose();
        }
      }
      if (nb >= 0) {
        std::vector<T> db(oc, T(0));
        for (std::size_t i = 0; i < n; ++i) {
          const T* u = up.data() + i * oc * oh * ow;
          for (std::size_t c = 0; c < oc; ++c) {
            T s = T(0);
            for (std::size_t p = 0; p < oh * ow; ++p) s += u[c * oh * ow + p];
            db[c] += s;
          }
        }
        tc.accumulate(nb, db.data(), db.size());
      }
      if (nw >= 0) tc.accumulate(nw, dw.data(), dw.size());
      if (nx >= 0) tc.accumulate(nx, dx.data(), dx.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

}  // namespace thumbnet
