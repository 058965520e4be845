#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lmcg/tensor.hpp"

// Forward + backward implementations for the op suite. Convolutions are
// im2col + Eigen GEMM; everything runs single-threaded so repeated runs
// are bit-identical. Backward passes skip gradient GEMMs for inputs that
// are not on the tape (e.g. frozen weights).

namespace lmcg {

struct Rect {
  int x0 = 0, y0 = 0, w = 0, h = 0;
};

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

inline int conv_out_dim(int in, int k, int s, int p) {
  return (in + 2 * p - k) / s + 1;
}

template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int s, int p,
            int Ho, int Wo, T* col) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* row = col + std::size_t(((c * kh + ki) * kw + kj)) * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * s - p + ki;
          if (ih < 0 || ih >= H) {
            std::fill(row + oh * Wo, row + (oh + 1) * Wo, T(0));
            continue;
          }
          const T* src = x + std::size_t(c * H + ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * s - p + kj;
            row[oh * Wo + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int s,
                int p, int Ho, int Wo, T* x) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* row = col + std::size_t(((c * kh + ki) * kw + kj)) * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * s - p + ki;
          if (ih < 0 || ih >= H) continue;
          T* dst = x + std::size_t(c * H + ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * s - p + kj;
            if (iw >= 0 && iw < W) dst[iw] += row[oh * Wo + ow];
          }
        }
      }
    }
  }
}

template <typename T>
void require_rank4(const Tensor<T>& x, const char* op) {
  require(x.defined() && x.rank() == 4,
          std::string(op) + ": expected rank-4 N,C,H,W input, got " +
              (x.defined() ? shape_str(x.shape()) : std::string("<null>")));
}

}  // namespace detail

// ---------------------------------------------------------------------
// Convolution family
// ---------------------------------------------------------------------

/// 2-D convolution. x: [N,Ci,H,W], w: [Co,Ci,kh,kw], optional b: [Co].
/// Output spatial dims follow floor((in + 2*pad - k)/stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad) {
  detail::require_rank4(x, "conv2d");
  require(w.defined() && w.rank() == 4,
          "conv2d: weight must be rank-4 Co,Ci,kh,kw, got " +
              (w.defined() ? shape_str(w.shape()) : std::string("<null>")));
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  require(w.dim(1) == Ci, "conv2d: input channels " + shape_str(x.shape()) +
                              " do not match weight " + shape_str(w.shape()));
  if (b.defined())
    require(b.rank() == 1 && b.dim(0) == Co,
            "conv2d: bias shape " + shape_str(b.shape()) +
                " does not match weight " + shape_str(w.shape()));
  const int Ho = detail::conv_out_dim(H, kh, stride, pad);
  const int Wo = detail::conv_out_dim(W, kw, stride, pad);
  require(Ho >= 1 && Wo >= 1, "conv2d: kernel " + shape_str(w.shape()) +
                                  " does not fit input " + shape_str(x.shape()));

  Tensor<T> y = Tensor<T>::zeros({N, Co, Ho, Wo});
  const int K = Ci * kh * kw, M = Ho * Wo;
  std::vector<T> col(std::size_t(K) * M);
  detail::ECMap<T> Wm(w.data(), Co, K);
  for (int n = 0; n < N; ++n) {
    detail::im2col(x.data() + std::size_t(n) * Ci * H * W, Ci, H, W, kh, kw,
                   stride, pad, Ho, Wo, col.data());
    detail::ECMap<T> Cm(col.data(), K, M);
    detail::EMap<T> Ym(y.data() + std::size_t(n) * Co * M, Co, M);
    Ym.noalias() = Wm * Cm;
    if (b.defined()) Ym.colwise() += detail::ECMap<T>(b.data(), Co, 1).col(0);
  }
  detail::check_finite(y, "conv2d");

  detail::Recorder<T> rec{&x, &w, &b};
  if (rec.active()) {
    auto xs = x.storage_ptr();
    auto ws = w.storage_ptr();
    const bool has_b = b.defined();
    rec.record(y, [=, in = rec.in_nodes](const std::vector<T>& gy, Tape<T>& tp) {
      std::vector<T> colb(std::size_t(K) * M);
      const bool need_x = in[0] >= 0, need_w = in[1] >= 0,
                 need_b = has_b && in[2] >= 0;
      detail::ECMap<T> Wm2(ws->data.data(), Co, K);
      std::vector<T>* gx = need_x ? &tp.grad_buffer(in[0]) : nullptr;
      std::vector<T>* gw = need_w ? &tp.grad_buffer(in[1]) : nullptr;
      std::vector<T>* gb = need_b ? &tp.grad_buffer(in[2]) : nullptr;
      std::vector<T> dcol(need_x ? std::size_t(K) * M : 0);
      for (int n = 0; n < N; ++n) {
        detail::ECMap<T> Gy(gy.data() + std::size_t(n) * Co * M, Co, M);
        if (need_w || need_x)
          detail::im2col(xs->data.data() + std::size_t(n) * Ci * H * W, Ci, H,
                         W, kh, kw, stride, pad, Ho, Wo, colb.data());
        if (need_w) {
          detail::ECMap<T> Cm(colb.data(), K, M);
          detail::EMap<T>(gw->data(), Co, K).noalias() += Gy * Cm.transpose();
        }
        if (need_b)
          detail::EMap<T>(gb->data(), Co, 1).col(0) += Gy.rowwise().sum();
        if (need_x) {
          detail::EMap<T>(dcol.data(), K, M).noalias() = Wm2.transpose() * Gy;
          detail::col2im_add(dcol.data(), Ci, H, W, kh, kw, stride, pad, Ho,
                             Wo, gx->data() + std::size_t(n) * Ci * H * W);
        }
      }
    });
  }
  return y;
}

/// Transposed 2-D convolution (exact adjoint of conv2d with the same
/// kernel/stride/pad). x: [N,Ci,H,W], w: [Ci,Co,kh,kw], optional b: [Co].
/// Output spatial dims: (in-1)*stride - 2*pad + k + output_pad.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b, int stride, int pad,
                           int output_pad = 0) {
  detail::require_rank4(x, "conv_transpose2d");
  require(w.defined() && w.rank() == 4,
          "conv_transpose2d: weight must be rank-4 Ci,Co,kh,kw");
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  require(w.dim(0) == Ci,
          "conv_transpose2d: input channels " + shape_str(x.shape()) +
              " do not match weight " + shape_str(w.shape()));
  require(output_pad >= 0 && output_pad < stride,
          "conv_transpose2d: output_pad must lie in [0, stride)");
  const int Ho = (H - 1) * stride - 2 * pad + kh + output_pad;
  const int Wo = (W - 1) * stride - 2 * pad + kw + output_pad;
  require(Ho >= 1 && Wo >= 1, "conv_transpose2d: degenerate output size");
  if (b.defined())
    require(b.rank() == 1 && b.dim(0) == Co,
            "conv_transpose2d: bias shape " + shape_str(b.shape()) +
                " does not match weight " + shape_str(w.shape()));

  // The forward pass is the adjoint of a conv mapping (Co,Ho,Wo) ->
  // (Ci,H,W): col = W^T * x, then scatter with col2im.
  Tensor<T> y = Tensor<T>::zeros({N, Co, Ho, Wo});
  const int K = Co * kh * kw, M = H * W;
  std::vector<T> col(std::size_t(K) * M);
  detail::ECMap<T> Wm(w.data(), Ci, K);
  for (int n = 0; n < N; ++n) {
    detail::ECMap<T> Xm(x.data() + std::size_t(n) * Ci * M, Ci, M);
    detail::EMap<T> Cm(col.data(), K, M);
    Cm.noalias() = Wm.transpose() * Xm;
    T* out = y.data() + std::size_t(n) * Co * Ho * Wo;
    detail::col2im_add(col.data(), Co, Ho, Wo, kh, kw, stride, pad, H, W, out);
    if (b.defined()) {
      for (int c = 0; c < Co; ++c) {
        T* ch = out + std::size_t(c) * Ho * Wo;
        const T bias = b.data()[c];
        for (int i = 0; i < Ho * Wo; ++i) ch[i] += bias;
      }
    }
  }
  detail::check_finite(y, "conv_transpose2d");

  detail::Recorder<T> rec{&x, &w, &b};
  if (rec.active()) {
    auto xs = x.storage_ptr();
    auto ws = w.storage_ptr();
    const bool has_b = b.defined();
    rec.record(y, [=, in = rec.in_nodes](const std::vector<T>& gy, Tape<T>& tp) {
      const bool need_x = in[0] >= 0, need_w = in[1] >= 0,
                 need_b = has_b && in[2] >= 0;
      std::vector<T>* gx = need_x ? &tp.grad_buffer(in[0]) : nullptr;
      std::vector<T>* gw = need_w ? &tp.grad_buffer(in[1]) : nullptr;
      std::vector<T>* gb = need_b ? &tp.grad_buffer(in[2]) : nullptr;
      std::vector<T> colb(std::size_t(K) * M);
      detail::ECMap<T> Wm2(ws->data.data(), Ci, K);
      for (int n = 0; n < N; ++n) {
        const T* gyn = gy.data() + std::size_t(n) * Co * Ho * Wo;
        // dcol = im2col(gy) under the same geometry; dX = W * dcol.
        if (need_x || need_w)
          detail::im2col(gyn, Co, Ho, Wo, kh, kw, stride, pad, H, W,
                         colb.data());
        detail::ECMap<T> Gcol(colb.data(), K, M);
        if (need_x)
          detail::EMap<T>(gx->data() + std::size_t(n) * Ci * M, Ci, M)
              .noalias() += Wm2 * Gcol;
        if (need_w) {
          detail::ECMap<T> Xm(xs->data.data() + std::size_t(n) * Ci * M, Ci, M);
          detail::EMap<T>(gw->data(), Ci, K).noalias() +=
              Xm * Gcol.transpose();
        }
        if (need_b) {
          for (int c = 0; c < Co; ++c) {
            T acc = T(0);
            const T* ch = gyn + std::size_t(c) * Ho * Wo;
            for (int i = 0; i < Ho * Wo; ++i) acc += ch[i];
            (*gb)[std::size_t(c)] += acc;
          }
        }
      }
    });
  }
  return y;
}

/// Affine layer. x: [N,D], w: [M,D], b: [M] -> [N,M].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w,
                          const Tensor<T>& b) {
  require(x.defined() && x.rank() == 2,
          "fully_connected: expected rank-2 N,D input, got " +
              (x.defined() ? shape_str(x.shape()) : std::string("<null>")));
  require(w.defined() && w.rank() == 2 && w.dim(1) == x.dim(1),
          "fully_connected: weight " + shape_str(w.shape()) +
              " does not match input " + shape_str(x.shape()));
  const int N = x.dim(0), D = x.dim(1), M = w.dim(0);
  if (b.defined())
    require(b.rank() == 1 && b.dim(0) == M,
            "fully_connected: bias shape mismatch " + shape_str(b.shape()));

  Tensor<T> y = Tensor<T>::zeros({N, M});
  detail::ECMap<T> Xm(x.data(), N, D), Wm(w.data(), M, D);
  detail::EMap<T> Ym(y.data(), N, M);
  Ym.noalias() = Xm * Wm.transpose();
  if (b.defined()) Ym.rowwise() += detail::ECMap<T>(b.data(), 1, M).row(0);
  detail::check_finite(y, "fully_connected");

  detail::Recorder<T> rec{&x, &w, &b};
  if (rec.active()) {
    auto xs = x.storage_ptr();
    auto ws = w.storage_ptr();
    const bool has_b = b.defined();
    rec.record(y, [=, in = rec.in_nodes](const std::vector<T>& gy, Tape<T>& tp) {
      detail::ECMap<T> Gy(gy.data(), N, M);
      if (in[0] >= 0) {
        detail::ECMap<T> Wm2(ws->data.data(), M, D);
        detail::EMap<T>(tp.grad_buffer(in[0]).data(), N, D).noalias() +=
            Gy * Wm2;
      }
      if (in[1] >= 0) {
        detail::ECMap<T> Xm2(xs->data.data(), N, D);
        detail::EMap<T>(tp.grad_buffer(in[1]).data(), M, D).noalias() +=
            Gy.transpose() * Xm2;
      }
      if (has_b && in[2] >= 0)
        detail::EMap<T>(tp.grad_buffer(in[2]).data(), 1, M).row(0) +=
            Gy.colwise().sum();
    });
  }
  return y;
}

// ---------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------

namespace detail {
template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_elementwise(const Tensor<T>& x, const char* name, Fwd fwd,
                            Bwd bwd_factor_from_xy) {
  require(x.defined(), std::string(name) + ": undefined input");
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  const std::size_t n = std::size_t(x.numel());
  for (std::size_t i = 0; i < n; ++i) yd[i] = fwd(xd[i]);
  check_finite(y, name);
  Recorder<T> rec{&x};
  if (rec.active()) {
    auto xs = x.storage_ptr();
    auto ys = y.storage_ptr();
    rec.record(y, [=, in = rec.in_nodes](const std::vector<T>& gy, Tape<T>& tp) {
      auto& gx = tp.grad_buffer(in[0]);
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] += gy[i] * bwd_factor_from_xy(xs->data[i], ys->data[i]);
    });
  }
  return y;
}
}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_elementwise(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T xv, T) { return xv > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
  return detail::unary_elementwise(
      x, "leaky_relu", [alpha](T v) { return v > T(0) ? v : alpha * v; },
      [alpha](T xv, T) { return xv > T(0) ? T(1) : alpha; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary_elementwise(
      x, "tanh", [](T v) { return std::tanh(v); },
      [](T, T yv) { return T(1) - yv * yv; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_elementwise(
      x, "sigmoid",
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T, T yv) { return yv * (T(1) - yv); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.defined() && b.defined(), "add: undefined input");
  require(a.shape() == b.shape(), "add: shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* ad = a.data();
  const T* bd = b.data();
  T* yd = y.data();
  for (std::size_t i = 0; i < std::size_t(a.numel()); ++i) yd[i] = ad[i] + bd[i];
  detail::check_finite(y, "add");
  detail::Recorder<T> rec{&a, &b};
  if (rec.active()) {
    rec.record(y, [in = rec.in_nodes](const std::vector<T>& gy, Tape<T>& tp) {
      tp.accumulate(in[0], gy);
      tp.accumulate(in[1], gy);
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return detail::unary_elementwise(
      x, "mul_scalar", [s](T v) { return v * s; }, [s](T, T) { return s; });
}

// ---------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape target) {
  require(x.defined(), "reshape: undefined input");
  require(shape_numel(target) == x.numel(),
          "reshape: cannot reshape " + shape_str(x.shape()) + " to " +
              shape_str(target));
  Tensor<T> y = Tensor<T>::from(std::move(target), x.vec());
  detail::Recorder<T> rec{&x};
  if (rec.active()) {
    rec.record(y, [in = rec.in_nodes](const std::vector<T>& gy, Tape<T>& tp) {
      tp.accumulate(in[0], gy);
    });
  }
  return y;
}

/// [N,C,H,W] -> [N, C*H*W].
template <typename T>
Tensor<T> flatten_2d(const Tensor<T>& x) {
  detail::require_rank4(x, "flatten_2d");
  return reshape(x, {x.dim(0), int(x.numel() / x.dim(0))});
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  require(!xs.empty(), "concat_channels: no inputs");
  for (const auto& x : xs) detail::require_rank4(x, "concat_channels");
  const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int Ctot = 0;
  for (const auto& x : xs) {
    require(x.dim(0) == N && x.dim(2) == H && x.dim(3) == W,
            "concat_channels: mismatched N/H/W, " + shape_str(xs[0].shape()) +
                " vs " + shape_str(x.shape()));
    Ctot += x.dim(1);
  }
  Tensor<T> y = Tensor<T>::zeros({N, Ctot, H, W});
  const std::size_t plane = std::size_t(H) * W;
  for (int n = 0; n < N; ++n) {
    std::size_t coff = 0;
    for (const auto& x : xs) {
      const std::size_t len = std::size_t(x.dim(1)) * plane;
      std::copy_n(x.data() + std::size_t(n) * len, len,
                  y.data() + (std::size_t(n) * Ctot + coff) * plane);
      coff += std::size_t(x.dim(1));
    }
  }
  detail::check_finite(y, "concat_channels");

  Tape<T>* tape = detail::active_tape<T>();
  if (tape) {
    std::vector<int> in_nodes;
    bool any = false;
    std::vector<int> chans;
    for (const auto& x : xs) {
      const int id = tape->node_of(x);
      in_nodes.push_back(id);
      chans.push_back(x.dim(1));
      any = any || id >= 0;
    }
    if (any) {
      tape->record(y, in_nodes,
                   [in_nodes, chans, N, H, W, Ctot](const std::vector<T>& gy,
                                                    Tape<T>& tp) {
                     const std::size_t plane = std::size_t(H) * W;
                     std::size_t coff = 0;
                     for (std::size_t k = 0; k < in_nodes.size(); ++k) {
                       const std::size_t len = std::size_t(chans[k]) * plane;
                       if (in_nodes[k] >= 0) {
                         auto& gx = tp.grad_buffer(in_nodes[k]);
                         for (int n = 0; n < N; ++n) {
                           const T* src =
                               gy.data() + (std::size_t(n) * Ctot + coff) * plane;
                           T* dst = gx.data() + std::size_t(n) * len;
                           for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                         }
                       }
                       coff += std::size_t(chans[k]);
                     }
                   });
    }
  }
  return y;
}

/// Crops a spatial window; gradients scatter back into the window.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, const Rect& r) {
  detail::require_rank4(x, "crop");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(r.w > 0 && r.h > 0 && r.x0 >= 0 && r.y0 >= 0 && r.x0 + r.w <= W &&
              r.y0 + r.h <= H,
          "crop: rect x[" + std::to_string(r.x0) + "," +
              std::to_string(r.x0 + r.w) + ") y[" + std::to_string(r.y0) + "," +
              std::to_string(r.y0 + r.h) + ") outside image " +
              shape_str(x.shape()));
  Tensor<T> y = Tensor<T>::zeros({N, C, r.h, r.w});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < r.h; ++i)
        std::copy_n(&x.at(n, c, r.y0 + i, r.x0), std::size_t(r.w),
                    &y.at(n, c, i, 0));
  detail::Recorder<T> rec{&x};
  if (rec.active()) {
    rec.record(y, [in = rec.in_nodes, r, N, C, H, W](const std::vector<T>& gy,
                                                     Tape<T>& tp) {
      auto& gx = tp.grad_buffer(in[0]);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < r.h; ++i) {
            const T* src = gy.data() + std::size_t(((n * C + c) * r.h + i)) * r.w;
            T* dst = gx.data() +
                     std::size_t(((n * C + c) * H + r.y0 + i)) * W + r.x0;
            for (int j = 0; j < r.w; ++j) dst[j] += src[j];
          }
    });
  }
  return y;
}

/// Bilinear resize with half-pixel centers; linear in pixel values, so
/// its gradient is the exact transpose scatter.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int out_h, int out_w) {
  detail::require_rank4(x, "resize_bilinear");
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: bad target size");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);

  struct Tap {
    int i0, i1;
    T f;
  };
  auto taps = [](int out, int in) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      const double s = (o + 0.5) * double(in) / out - 0.5;
      double fl = std::floor(s);
      int i0 = int(fl);
      T f = T(s - fl);
      int i1 = i0 + 1;
      if (i0 < 0) { i0 = 0; i1 = 0; f = T(0); }
      if (i1 >= in) { i1 = in - 1; if (i0 > i1) i0 = i1; if (i0 == i1) f = T(0); }
      t[std::size_t(o)] = {i0, i1, f};
    }
    return t;
  };
  const auto ty = taps(out_h, H), tx = taps(out_w, W);

  Tensor<T> y = Tensor<T>::zeros({N, C, out_h, out_w});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = x.data() + std::size_t(n * C + c) * H * W;
      T* dst = y.data() + std::size_t(n * C + c) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[std::size_t(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& bx = tx[std::size_t(ox)];
          const T v00 = src[a.i0 * W + bx.i0], v01 = src[a.i0 * W + bx.i1];
          const T v10 = src[a.i1 * W + bx.i0], v11 = src[a.i1 * W + bx.i1];
          dst[oy * out_w + ox] = (T(1) - a.f) * ((T(1) - bx.f) * v00 + bx.f * v01) +
                                 a.f * ((T(1) - bx.f) * v10 + bx.f * v11);
        }
      }
    }
  detail::check_finite(y, "resize_bilinear");

  detail::Recorder<T> rec{&x};
  if (rec.active()) {
    rec.record(y, [in = rec.in_nodes, ty, tx, N, C, H, W, out_h,
                   out_w](const std::vector<T>& gy, Tape<T>& tp) {
      auto& gx = tp.grad_buffer(in[0]);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          T* dst = gx.data() + std::size_t(n * C + c) * H * W;
          const T* src = gy.data() + std::size_t(n * C + c) * out_h * out_w;
          for (int oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[std::size_t(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
              const auto& bx = tx[std::size_t(ox)];
              const T g = src[oy * out_w + ox];
              dst[a.i0 * W + bx.i0] += (T(1) - a.f) * (T(1) - bx.f) * g;
              dst[a.i0 * W + bx.i1] += (T(1) - a.f) * bx.f * g;
              dst[a.i1 * W + bx.i0] += a.f * (T(1) - bx.f) * g;
              dst[a.i1 * W + bx.i1] += a.f * bx.f * g;
            }
          }
        }
    });
  }
  return y;
}

/// [N,C,H,W] -> [N,C], mean over the spatial plane.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_rank4(x, "global_avg_pool");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const T inv = T(1) / T(H * W);
  Tensor<T> y = Tensor<T>::zeros({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = x.data() + std::size_t(n * C + c) * H * W;
      T acc = T(0);
      for (int i = 0; i < H * W; ++i) acc += src[i];
      y.data()[n * C + c] = acc * inv;
    }
  detail::check_finite(y, "global_avg_pool");
  detail::Recorder<T> rec{&x};
  if (rec.active()) {
    rec.record(y, [in = rec.in_nodes, N, C, H, W, inv](const std::vector<T>& gy,
                                                       Tape<T>& tp) {
      auto& gx = tp.grad_buffer(in[0]);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T g = gy[std::size_t(n * C + c)] * inv;
          T* dst = gx.data() + std::size_t(n * C + c) * H * W;
          for (int i = 0; i < H * W; ++i) dst[i] += g;
        }
    });
  }
  return y;
}

/// Instance normalization over each (sample, channel) plane, optional
/// per-channel affine. Uses biased variance, eps inside the sqrt.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                        const Tensor<T>& beta, T eps = T(1e-5)) {
  detail::require_rank4(x, "instance_norm");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int m = H * W;
  const bool affine = gamma.defined();
  if (affine) {
    require(beta.defined(), "instance_norm: gamma without beta");
    require(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 &&
                beta.dim(0) == C,
            "instance_norm: affine params must be [C]=" + std::to_string(C) +
                ", got " + shape_str(gamma.shape()) + " and " +
                shape_str(beta.shape()));
  }

  Tensor<T> y = Tensor<T>::zeros(x.shape());
  // Saved for backward: normalized values and the inverse stddevs.
  auto norm = std::make_shared<std::vector<T>>(std::size_t(x.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(std::size_t(N) * C);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = x.data() + std::size_t(n * C + c) * m;
      T* nv = norm->data() + std::size_t(n * C + c) * m;
      T* dst = y.data() + std::size_t(n * C + c) * m;
      T mu = T(0);
      for (int i = 0; i < m; ++i) mu += src[i];
      mu /= T(m);
      T var = T(0);
      for (int i = 0; i < m; ++i) {
        const T d = src[i] - mu;
        var += d * d;
      }
      var /= T(m);
      const T inv = T(1) / std::sqrt(var + eps);
      (*inv_std)[std::size_t(n * C + c)] = inv;
      const T g = affine ? gamma.data()[c] : T(1);
      const T bb = affine ? beta.data()[c] : T(0);
      for (int i = 0; i < m; ++i) {
        nv[i] = (src[i] - mu) * inv;
        dst[i] = g * nv[i] + bb;
      }
    }
  detail::check_finite(y, "instance_norm");

  detail::Recorder<T> rec{&x, &gamma, &beta};
  if (rec.active()) {
    auto gs = affine ? gamma.storage_ptr() : nullptr;
    rec.record(y, [=, in = rec.in_nodes](const std::vector<T>& gy, Tape<T>& tp) {
      const bool need_x = in[0] >= 0;
      const bool need_g = affine && in[1] >= 0;
      const bool need_b = affine && in[2] >= 0;
      std::vector<T>* gx = need_x ? &tp.grad_buffer(in[0]) : nullptr;
      std::vector<T>* gg = need_g ? &tp.grad_buffer(in[1]) : nullptr;
      std::vector<T>* gb = need_b ? &tp.grad_buffer(in[2]) : nullptr;
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T* nv = norm->data() + std::size_t(n * C + c) * m;
          const T* g = gy.data() + std::size_t(n * C + c) * m;
          const T gam = affine ? gs->data[std::size_t(c)] : T(1);
          if (need_g) {
            T acc = T(0);
            for (int i = 0; i < m; ++i) acc += g[i] * nv[i];
            (*gg)[std::size_t(c)] += acc;
          }
          if (need_b) {
            T acc = T(0);
            for (int i = 0; i < m; ++i) acc += g[i];
            (*gb)[std::size_t(c)] += acc;
          }
          if (need_x) {
            // dL/dy_hat then the standard normalization backward.
            T mean_dy = T(0), mean_dyy = T(0);
            for (int i = 0; i < m; ++i) {
              const T dy = g[i] * gam;
              mean_dy += dy;
              mean_dyy += dy * nv[i];
            }
            mean_dy /= T(m);
            mean_dyy /= T(m);
            const T inv = (*inv_std)[std::size_t(n * C + c)];
            T* dst = gx->data() + std::size_t(n * C + c) * m;
            for (int i = 0; i < m; ++i) {
              const T dy = g[i] * gam;
              dst[i] += inv * (dy - mean_dy - nv[i] * mean_dyy);
            }
          }
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------
// Reductions (all return rank-0 scalars)
// ---------------------------------------------------------------------

namespace detail {
template <typename T>
void require_nonempty(const Tensor<T>& x, const char* op) {
  require(x.defined() && x.numel() > 0,
          std::string(op) + ": empty input rejected");
}
}  // namespace detail

/// mean |x|
template <typename T>
Tensor<T> l1_mean(const Tensor<T>& x) {
  detail::require_nonempty(x, "l1_mean");
  const std::size_t n = std::size_t(x.numel());
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(x.data()[i]);
  Tensor<T> y = Tensor<T>::scalar(acc / T(n));
  detail::check_finite(y, "l1_mean");
  detail::Recorder<T> rec{&x};
  if (rec.active()) {
    auto xs = x.storage_ptr();
    rec.record(y, [xs, n, in = rec.in_nodes](const std::vector<T>& gy,
                                             Tape<T>& tp) {
      auto& gx = tp.grad_buffer(in[0]);
      const T g = gy[0] / T(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T v = xs->data[i];
        gx[i] += v > T(0) ? g : (v < T(0) ? -g : T(0));
      }
    });
  }
  return y;
}

/// mean |a - b|
template <typename T>
Tensor<T> l1_mean(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_nonempty(a, "l1_mean");
  require(a.shape() == b.shape(), "l1_mean: shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  const std::size_t n = std::size_t(a.numel());
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(a.data()[i] - b.data()[i]);
  Tensor<T> y = Tensor<T>::scalar(acc / T(n));
  detail::check_finite(y, "l1_mean");
  detail::Recorder<T> rec{&a, &b};
  if (rec.active()) {
    auto as = a.storage_ptr();
    auto bs = b.storage_ptr();
    rec.record(y, [as, bs, n, in = rec.in_nodes](const std::vector<T>& gy,
                                                 Tape<T>& tp) {
      const T g = gy[0] / T(n);
      std::vector<T>* ga = in[0] >= 0 ? &tp.grad_buffer(in[0]) : nullptr;
      std::vector<T>* gb = in[1] >= 0 ? &tp.grad_buffer(in[1]) : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const T d = as->data[i] - bs->data[i];
        const T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
        if (ga) (*ga)[i] += s;
        if (gb) (*gb)[i] -= s;
      }
    });
  }
  return y;
}

/// mean x^2
template <typename T>
Tensor<T> l2_mean(const Tensor<T>& x) {
  detail::require_nonempty(x, "l2_mean");
  const std::size_t n = std::size_t(x.numel());
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += x.data()[i] * x.data()[i];
  Tensor<T> y = Tensor<T>::scalar(acc / T(n));
  detail::check_finite(y, "l2_mean");
  detail::Recorder<T> rec{&x};
  if (rec.active()) {
    auto xs = x.storage_ptr();
    rec.record(y, [xs, n, in = rec.in_nodes](const std::vector<T>& gy,
                                             Tape<T>& tp) {
      auto& gx = tp.grad_buffer(in[0]);
      const T g = gy[0] * T(2) / T(n);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g * xs->data[i];
    });
  }
  return y;
}

/// mean (a - b)^2
template <typename T>
Tensor<T> mse_mean(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_nonempty(a, "mse_mean");
  require(a.shape() == b.shape(), "mse_mean: shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  const std::size_t n = std::size_t(a.numel());
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  Tensor<T> y = Tensor<T>::scalar(acc / T(n));
  detail::check_finite(y, "mse_mean");
  detail::Recorder<T> rec{&a, &b};
  if (rec.active()) {
    auto as = a.storage_ptr();
    auto bs = b.storage_ptr();
    rec.record(y, [as, bs, n, in = rec.in_nodes](const std::vector<T>& gy,
                                                 Tape<T>& tp) {
      const T g = gy[0] * T(2) / T(n);
      std::vector<T>* ga = in[0] >= 0 ? &tp.grad_buffer(in[0]) : nullptr;
      std::vector<T>* gb = in[1] >= 0 ? &tp.grad_buffer(in[1]) : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const T d = g * (as->data[i] - bs->data[i]);
        if (ga) (*ga)[i] += d;
        if (gb) (*gb)[i] -= d;
      }
    });
  }
  return y;
}

/// Numerically stable binary cross-entropy on raw logits against a
/// constant target, averaged over elements.
template <typename T>
Tensor<T> bce_with_logits_mean(const Tensor<T>& logits, T target) {
  detail::require_nonempty(logits, "bce_with_logits_mean");
  const std::size_t n = std::size_t(logits.numel());
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits.data()[i];
    acc += std::max(z, T(0)) - z * target + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor<T> y = Tensor<T>::scalar(acc / T(n));
  detail::check_finite(y, "bce_with_logits_mean");
  detail::Recorder<T> rec{&logits};
  if (rec.active()) {
    auto zs = logits.storage_ptr();
    rec.record(y, [zs, n, target, in = rec.in_nodes](const std::vector<T>& gy,
                                                     Tape<T>& tp) {
      auto& gx = tp.grad_buffer(in[0]);
      const T g = gy[0] / T(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T z = zs->data[i];
        const T sig = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                                : std::exp(z) / (T(1) + std::exp(z));
        gx[i] += g * (sig - target);
      }
    });
  }
  return y;
}

/// Square root of a non-negative scalar; gradient at exactly zero is
/// taken as zero.
template <typename T>
Tensor<T> sqrt_scalar(const Tensor<T>& x) {
  require(x.defined() && x.numel() == 1,
          "sqrt_scalar: expected a scalar, got " +
              (x.defined() ? shape_str(x.shape()) : std::string("<null>")));
  require(x.item() >= T(0), "sqrt_scalar: negative input");
  const T root = std::sqrt(x.item());
  Tensor<T> y = Tensor<T>::scalar(root);
  detail::Recorder<T> rec{&x};
  if (rec.active()) {
    rec.record(y, [root, in = rec.in_nodes](const std::vector<T>& gy,
                                            Tape<T>& tp) {
      if (root > T(0)) {
        auto& gx = tp.grad_buffer(in[0]);
        gx[0] += gy[0] / (T(2) * root);
      } else {
        (void)tp.grad_buffer(in[0]);
      }
    });
  }
  return y;
}

}  // namespace lmcg
