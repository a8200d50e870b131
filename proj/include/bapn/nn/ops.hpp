#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "bapn/nn/tensor.hpp"

namespace bapn::nn {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

template <typename T>
void check_same_shape(Tensor<T> a, Tensor<T> b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
              " differ");
}

template <typename T>
std::vector<T>& scratch_a() {
  thread_local std::vector<T> buf;
  return buf;
}

template <typename T>
std::vector<T>& scratch_b() {
  thread_local std::vector<T> buf;
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> v(a.numel());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(v), {a, b}, [a, b](Node<T>& n) mutable {
    if (a.requires_grad())
      for (size_t i = 0; i < n.grad.size(); ++i) a.grad()[i] += n.grad[i];
    if (b.requires_grad())
      for (size_t i = 0; i < n.grad.size(); ++i) b.grad()[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> v(a.numel());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(v), {a, b}, [a, b](Node<T>& n) mutable {
    if (a.requires_grad())
      for (size_t i = 0; i < n.grad.size(); ++i) a.grad()[i] += n.grad[i];
    if (b.requires_grad())
      for (size_t i = 0; i < n.grad.size(); ++i) b.grad()[i] -= n.grad[i];
  });
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> v(a.numel());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(v), {a, b}, [a, b](Node<T>& n) mutable {
    if (a.requires_grad())
      for (size_t i = 0; i < n.grad.size(); ++i) a.grad()[i] += n.grad[i] * b.data()[i];
    if (b.requires_grad())
      for (size_t i = 0; i < n.grad.size(); ++i) b.grad()[i] += n.grad[i] * a.data()[i];
  });
}

template <typename T>
Tensor<T> scale(Tensor<T> a, T c) {
  std::vector<T> v(a.numel());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
  return make_result<T>(a.shape(), std::move(v), {a}, [a, c](Node<T>& n) mutable {
    for (size_t i = 0; i < n.grad.size(); ++i) a.grad()[i] += n.grad[i] * c;
  });
}

template <typename T>
Tensor<T> sum_all(Tensor<T> a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  return make_result<T>({1}, {acc}, {a}, [a](Node<T>& n) mutable {
    T g = n.grad[0];
    for (size_t i = 0; i < a.numel(); ++i) a.grad()[i] += g;
  });
}

template <typename T>
Tensor<T> mean_all(Tensor<T> a) {
  require(a.numel() > 0, ErrorCode::ShapeMismatch, "mean of an empty tensor");
  T inv = T(1) / static_cast<T>(a.numel());
  T acc = 0;
  for (T v : a.data()) acc += v;
  acc *= inv;
  return make_result<T>({1}, {acc}, {a}, [a, inv](Node<T>& n) mutable {
    T g = n.grad[0] * inv;
    for (size_t i = 0; i < a.numel(); ++i) a.grad()[i] += g;
  });
}

template <typename T>
Tensor<T> relu(Tensor<T> a) {
  std::vector<T> v(a.numel());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  return make_result<T>(a.shape(), std::move(v), {a}, [a](Node<T>& n) mutable {
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (a.data()[i] > T(0)) a.grad()[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> a) {
  std::vector<T> v(a.numel());
  for (size_t i = 0; i < v.size(); ++i) v[i] = T(1) / (T(1) + std::exp(-a.data()[i]));
  return make_result<T>(a.shape(), std::move(v), {a}, [a](Node<T>& n) mutable {
    for (size_t i = 0; i < n.grad.size(); ++i) {
      T y = n.value[i];
      a.grad()[i] += n.grad[i] * y * (T(1) - y);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops (NCHW unless stated otherwise)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Tensor<T> a, Shape new_shape) {
  require(shape_numel(new_shape) == a.numel(), ErrorCode::ShapeMismatch,
          "reshape " + shape_str(a.shape()) + " -> " + shape_str(new_shape) +
              " changes the element count");
  std::vector<T> v = a.data();
  return make_result<T>(std::move(new_shape), std::move(v), {a}, [a](Node<T>& n) mutable {
    for (size_t i = 0; i < n.grad.size(); ++i) a.grad()[i] += n.grad[i];
  });
}

/// Concatenate along `axis`; all other dimensions must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  require(!parts.empty(), ErrorCode::ShapeMismatch, "concat of nothing");
  Shape shape = parts[0].shape();
  require(axis >= 0 && axis < static_cast<int>(shape.size()), ErrorCode::ShapeMismatch,
          "concat axis out of range");
  int total = 0;
  for (const auto& p : parts) {
    require(static_cast<int>(p.shape().size()) == static_cast<int>(shape.size()),
            ErrorCode::ShapeMismatch, "concat rank mismatch");
    for (size_t d = 0; d < shape.size(); ++d)
      require(static_cast<int>(d) == axis || p.shape()[d] == shape[d], ErrorCode::ShapeMismatch,
              "concat parts disagree off-axis");
    total += p.shape()[axis];
  }
  size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  for (size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];

  Shape out_shape = shape;
  out_shape[axis] = total;
  std::vector<T> v(shape_numel(out_shape));
  size_t off = 0;
  for (const auto& p : parts) {
    size_t span = size_t(p.shape()[axis]) * inner;
    for (size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * span, span, v.data() + o * size_t(total) * inner + off);
    off += span;
  }
  auto parts_copy = parts;
  return make_result<T>(out_shape, std::move(v), parts,
                        [parts_copy, outer, inner, total, axis](Node<T>& n) mutable {
                          size_t off = 0;
                          for (auto& p : parts_copy) {
                            size_t span = size_t(p.shape()[axis]) * inner;
                            if (p.requires_grad())
                              for (size_t o = 0; o < outer; ++o) {
                                const T* g = n.grad.data() + o * size_t(total) * inner + off;
                                T* dst = p.grad().data() + o * span;
                                for (size_t i = 0; i < span; ++i) dst[i] += g[i];
                              }
                            off += span;
                          }
                        });
}

/// Slice [from, to) along `axis`.
template <typename T>
Tensor<T> slice(Tensor<T> a, int axis, int from, int to) {
  const Shape& shape = a.shape();
  require(axis >= 0 && axis < static_cast<int>(shape.size()), ErrorCode::ShapeMismatch,
          "slice axis out of range");
  require(0 <= from && from < to && to <= shape[axis], ErrorCode::ShapeMismatch,
          "slice range out of bounds");
  size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  for (size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  size_t src_span = size_t(shape[axis]) * inner;
  size_t dst_span = size_t(to - from) * inner;

  Shape out_shape = shape;
  out_shape[axis] = to - from;
  std::vector<T> v(shape_numel(out_shape));
  for (size_t o = 0; o < outer; ++o)
    std::copy_n(a.data().data() + o * src_span + size_t(from) * inner, dst_span,
                v.data() + o * dst_span);
  return make_result<T>(out_shape, std::move(v),
                        {a}, [a, outer, inner, src_span, dst_span, from](Node<T>& n) mutable {
                          for (size_t o = 0; o < outer; ++o) {
                            const T* g = n.grad.data() + o * dst_span;
                            T* dst = a.grad().data() + o * src_span + size_t(from) * inner;
                            for (size_t i = 0; i < dst_span; ++i) dst[i] += g[i];
                          }
                        });
}

/// Zero-pad the two spatial dims of an NCHW tensor.
template <typename T>
Tensor<T> pad2d(Tensor<T> a, int top, int bottom, int left, int right) {
  require(a.shape().size() == 4, ErrorCode::ShapeMismatch, "pad2d expects NCHW");
  require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, ErrorCode::ShapeMismatch,
          "negative padding");
  int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  int Ho = H + top + bottom, Wo = W + left + right;
  std::vector<T> v(size_t(N) * C * Ho * Wo, T(0));
  for (int nc = 0; nc < N * C; ++nc)
    for (int y = 0; y < H; ++y)
      std::copy_n(a.data().data() + (size_t(nc) * H + y) * W, W,
                  v.data() + (size_t(nc) * Ho + y + top) * Wo + left);
  return make_result<T>({N, C, Ho, Wo}, std::move(v),
                        {a}, [a, N, C, H, W, Ho, Wo, top, left](Node<T>& n) mutable {
                          for (int nc = 0; nc < N * C; ++nc)
                            for (int y = 0; y < H; ++y) {
                              const T* g = n.grad.data() + (size_t(nc) * Ho + y + top) * Wo + left;
                              T* dst = a.grad().data() + (size_t(nc) * H + y) * W;
                              for (int x = 0; x < W; ++x) dst[x] += g[x];
                            }
                        });
}

/// Crop a spatial window starting at (top, left).
template <typename T>
Tensor<T> crop2d(Tensor<T> a, int top, int left, int Ho, int Wo) {
  require(a.shape().size() == 4, ErrorCode::ShapeMismatch, "crop2d expects NCHW");
  int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  require(top >= 0 && left >= 0 && Ho > 0 && Wo > 0 && top + Ho <= H && left + Wo <= W,
          ErrorCode::ShapeMismatch, "crop window out of bounds");
  std::vector<T> v(size_t(N) * C * Ho * Wo);
  for (int nc = 0; nc < N * C; ++nc)
    for (int y = 0; y < Ho; ++y)
      std::copy_n(a.data().data() + (size_t(nc) * H + y + top) * W + left, Wo,
                  v.data() + (size_t(nc) * Ho + y) * Wo);
  return make_result<T>({N, C, Ho, Wo}, std::move(v),
                        {a}, [a, N, C, H, W, Ho, Wo, top, left](Node<T>& n) mutable {
                          for (int nc = 0; nc < N * C; ++nc)
                            for (int y = 0; y < Ho; ++y) {
                              const T* g = n.grad.data() + (size_t(nc) * Ho + y) * Wo;
                              T* dst = a.grad().data() + (size_t(nc) * H + y + top) * W + left;
                              for (int x = 0; x < Wo; ++x) dst[x] += g[x];
                            }
                        });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct Conv2dGeom {
  int N, C, H, W;    // input
  int F, kh, kw;     // filters
  int stride, pad, dil;
  int Ho, Wo;        // output positions
};

inline int conv_out_extent(int in, int pad, int dil, int k, int stride) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

namespace detail {

/// Gather patches of src [C,H,W] into col [C*kh*kw, Py*Px] where position
/// (py, px) reads input pixel (py*stride - pad + ki*dil, ...). Out-of-range
/// reads become zeros.
template <typename T>
void im2col(const T* src, int C, int H, int W, int kh, int kw, int stride, int pad, int dil,
            int Py, int Px, T* col) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        T* row = col + (size_t(c) * kh * kw + size_t(ki) * kw + kj) * (size_t(Py) * Px);
        const T* plane = src + size_t(c) * H * W;
        for (int py = 0; py < Py; ++py) {
          int iy = py * stride - pad + ki * dil;
          T* out = row + size_t(py) * Px;
          if (iy < 0 || iy >= H) {
            std::fill_n(out, Px, T(0));
            continue;
          }
          const T* line = plane + size_t(iy) * W;
          for (int px = 0; px < Px; ++px) {
            int ix = px * stride - pad + kj * dil;
            out[px] = (ix >= 0 && ix < W) ? line[ix] : T(0);
          }
        }
      }
}

/// Scatter-add the exact transpose of im2col: col [C*kh*kw, Py*Px] back
/// into dst [C,H,W].
template <typename T>
void col2im(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, int dil,
            int Py, int Px, T* dst) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const T* row = col + (size_t(c) * kh * kw + size_t(ki) * kw + kj) * (size_t(Py) * Px);
        T* plane = dst + size_t(c) * H * W;
        for (int py = 0; py < Py; ++py) {
          int iy = py * stride - pad + ki * dil;
          if (iy < 0 || iy >= H) continue;
          const T* in = row + size_t(py) * Px;
          T* line = plane + size_t(iy) * W;
          for (int px = 0; px < Px; ++px) {
            int ix = px * stride - pad + kj * dil;
            if (ix >= 0 && ix < W) line[ix] += in[px];
          }
        }
      }
}

}  // namespace detail

/// Plain-loop convolution over raw buffers; the reference the GEMM path is
/// checked against, and slow on purpose.
template <typename T>
std::vector<T> conv2d_direct(const std::vector<T>& x, const std::vector<T>& w,
                             const Conv2dGeom& g) {
  std::vector<T> out(size_t(g.N) * g.F * g.Ho * g.Wo, T(0));
  for (int n = 0; n < g.N; ++n)
    for (int f = 0; f < g.F; ++f)
      for (int oy = 0; oy < g.Ho; ++oy)
        for (int ox = 0; ox < g.Wo; ++ox) {
          T acc = 0;
          for (int c = 0; c < g.C; ++c)
            for (int ki = 0; ki < g.kh; ++ki)
              for (int kj = 0; kj < g.kw; ++kj) {
                int iy = oy * g.stride - g.pad + ki * g.dil;
                int ix = ox * g.stride - g.pad + kj * g.dil;
                if (iy < 0 || iy >= g.H || ix < 0 || ix >= g.W) continue;
                acc += x[((size_t(n) * g.C + c) * g.H + iy) * g.W + ix] *
                       w[((size_t(f) * g.C + c) * g.kh + ki) * g.kw + kj];
              }
          out[((size_t(n) * g.F + f) * g.Ho + oy) * g.Wo + ox] = acc;
        }
  return out;
}

/// 2-d convolution, x [N,C,H,W] * w [F,C,kh,kw] -> [N,F,Ho,Wo]. Forward
/// and backward run as im2col + GEMM.
template <typename T>
Tensor<T> conv2d(Tensor<T> x, Tensor<T> w, int stride, int pad = 0, int dil = 1) {
  require(x.shape().size() == 4 && w.shape().size() == 4, ErrorCode::ShapeMismatch,
          "conv2d expects NCHW input and FCHW weights");
  require(stride >= 1 && pad >= 0 && dil >= 1, ErrorCode::ShapeMismatch, "bad conv parameters");
  Conv2dGeom g;
  g.N = x.dim(0); g.C = x.dim(1); g.H = x.dim(2); g.W = x.dim(3);
  g.F = w.dim(0); g.kh = w.dim(2); g.kw = w.dim(3);
  g.stride = stride; g.pad = pad; g.dil = dil;
  require(w.dim(1) == g.C, ErrorCode::ShapeMismatch,
          "conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " +
              std::to_string(g.C));
  g.Ho = conv_out_extent(g.H, pad, dil, g.kh, stride);
  g.Wo = conv_out_extent(g.W, pad, dil, g.kw, stride);
  require(g.Ho >= 1 && g.Wo >= 1, ErrorCode::ShapeMismatch, "conv2d output would be empty");

  const size_t ckk = size_t(g.C) * g.kh * g.kw;
  const size_t pos = size_t(g.Ho) * g.Wo;
  std::vector<T>& col = detail::scratch_a<T>();
  col.resize(ckk * pos);

  std::vector<T> v(size_t(g.N) * g.F * pos);
  ConstMatMap<T> wm(w.data().data(), g.F, ckk);
  for (int n = 0; n < g.N; ++n) {
    detail::im2col(x.data().data() + size_t(n) * g.C * g.H * g.W, g.C, g.H, g.W, g.kh, g.kw,
                   stride, pad, dil, g.Ho, g.Wo, col.data());
    ConstMatMap<T> cm(col.data(), ckk, pos);
    MatMap<T> om(v.data() + size_t(n) * g.F * pos, g.F, pos);
    om.noalias() = wm * cm;
  }

  return make_result<T>({g.N, g.F, g.Ho, g.Wo}, std::move(v), {x, w}, [x, w, g](Node<T>& n) mutable {
    const size_t ckk = size_t(g.C) * g.kh * g.kw;
    const size_t pos = size_t(g.Ho) * g.Wo;
    const size_t in_plane = size_t(g.C) * g.H * g.W;
    std::vector<T>& col = detail::scratch_a<T>();
    std::vector<T>& gcol = detail::scratch_b<T>();
    ConstMatMap<T> wm(w.data().data(), g.F, ckk);
    for (int b = 0; b < g.N; ++b) {
      ConstMatMap<T> gy(n.grad.data() + size_t(b) * g.F * pos, g.F, pos);
      if (w.requires_grad()) {
        col.resize(ckk * pos);
        detail::im2col(x.data().data() + b * in_plane, g.C, g.H, g.W, g.kh, g.kw, g.stride, g.pad,
                       g.dil, g.Ho, g.Wo, col.data());
        ConstMatMap<T> cm(col.data(), ckk, pos);
        MatMap<T> gw(w.grad().data(), g.F, ckk);
        gw.noalias() += gy * cm.transpose();
      }
      if (x.requires_grad()) {
        gcol.resize(ckk * pos);
        MatMap<T> gc(gcol.data(), ckk, pos);
        gc.noalias() = wm.transpose() * gy;
        detail::col2im(gcol.data(), g.C, g.H, g.W, g.kh, g.kw, g.stride, g.pad, g.dil, g.Ho, g.Wo,
                       x.grad().data() + b * in_plane);
      }
    }
  });
}

/// Transposed convolution, x [N,C,H,W] * w [C,F,kh,kw] -> [N,F,Ho,Wo] with
/// Ho = (H-1)*stride - 2*pad + kh. The forward pass is the scatter adjoint
/// of a stride-`stride` convolution, so GEMM + col2im implements it.
template <typename T>
Tensor<T> conv_transpose2d(Tensor<T> x, Tensor<T> w, int stride, int pad = 0) {
  require(x.shape().size() == 4 && w.shape().size() == 4, ErrorCode::ShapeMismatch,
          "conv_transpose2d expects NCHW input and CFHW weights");
  require(stride >= 1 && pad >= 0, ErrorCode::ShapeMismatch, "bad conv parameters");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(w.dim(0) == C, ErrorCode::ShapeMismatch,
          "conv_transpose2d: weight expects " + std::to_string(w.dim(0)) + " input channels, got " +
              std::to_string(C));
  int F = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  int Ho = (H - 1) * stride - 2 * pad + kh;
  int Wo = (W - 1) * stride - 2 * pad + kw;
  require(Ho >= 1 && Wo >= 1, ErrorCode::ShapeMismatch, "conv_transpose2d output would be empty");

  const size_t fkk = size_t(F) * kh * kw;
  const size_t pos = size_t(H) * W;
  const size_t out_plane = size_t(F) * Ho * Wo;
  std::vector<T>& tmp = detail::scratch_a<T>();
  tmp.resize(fkk * pos);

  std::vector<T> v(size_t(N) * out_plane, T(0));
  ConstMatMap<T> wm(w.data().data(), C, fkk);
  for (int n = 0; n < N; ++n) {
    ConstMatMap<T> xm(x.data().data() + size_t(n) * C * pos, C, pos);
    MatMap<T> tm(tmp.data(), fkk, pos);
    tm.noalias() = wm.transpose() * xm;
    detail::col2im(tmp.data(), F, Ho, Wo, kh, kw, stride, pad, 1, H, W, v.data() + n * out_plane);
  }

  return make_result<T>(
      {N, F, Ho, Wo}, std::move(v), {x, w},
      [x, w, N, C, H, W, F, kh, kw, Ho, Wo, stride, pad](Node<T>& n) mutable {
        const size_t fkk = size_t(F) * kh * kw;
        const size_t pos = size_t(H) * W;
        const size_t out_plane = size_t(F) * Ho * Wo;
        std::vector<T>& gtmp = detail::scratch_a<T>();
        gtmp.resize(fkk * pos);
        ConstMatMap<T> wm(w.data().data(), C, fkk);
        for (int b = 0; b < N; ++b) {
          // Gathering the output gradient with the forward conv geometry
          // inverts the scatter exactly.
          detail::im2col(n.grad.data() + b * out_plane, F, Ho, Wo, kh, kw, stride, pad, 1, H, W,
                         gtmp.data());
          ConstMatMap<T> gt(gtmp.data(), fkk, pos);
          if (x.requires_grad()) {
            MatMap<T> gx(x.grad().data() + size_t(b) * C * pos, C, pos);
            gx.noalias() += wm * gt;
          }
          if (w.requires_grad()) {
            ConstMatMap<T> xm(x.data().data() + size_t(b) * C * pos, C, pos);
            MatMap<T> gw(w.grad().data(), C, fkk);
            gw.noalias() += xm * gt.transpose();
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization, resampling, losses
// ---------------------------------------------------------------------------

/// Running statistics of one batchnorm layer; owned by the model and
/// serialized with the weights.
template <typename T>
struct BNState {
  std::vector<T> running_mean, running_var;

  explicit BNState(int channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// Batch normalization over NCHW with per-channel scale and shift. In
/// training mode the batch statistics normalize and update the running
/// estimates; in eval mode the running estimates normalize.
template <typename T>
Tensor<T> batchnorm2d(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta,
                      BNState<T>& state, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  require(x.shape().size() == 4, ErrorCode::ShapeMismatch, "batchnorm2d expects NCHW");
  int N = x.dim(0), C = x.dim(1);
  size_t hw = size_t(x.dim(2)) * x.dim(3);
  size_t m = size_t(N) * hw;
  require(gamma.shape() == Shape{C} && beta.shape() == Shape{C}, ErrorCode::ShapeMismatch,
          "batchnorm2d scale/shift must have one entry per channel");
  require(static_cast<int>(state.running_mean.size()) == C, ErrorCode::ShapeMismatch,
          "batchnorm2d state has the wrong channel count");

  std::vector<T> mean(C), inv_std(C);
  if (training) {
    require(m >= 2, ErrorCode::DegenerateBatch,
            "batch statistics need at least 2 values per channel");
    for (int c = 0; c < C; ++c) {
      T mu = 0;
      for (int n = 0; n < N; ++n) {
        const T* src = x.data().data() + (size_t(n) * C + c) * hw;
        for (size_t i = 0; i < hw; ++i) mu += src[i];
      }
      mu /= static_cast<T>(m);
      T var = 0;
      for (int n = 0; n < N; ++n) {
        const T* src = x.data().data() + (size_t(n) * C + c) * hw;
        for (size_t i = 0; i < hw; ++i) {
          T d = src[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      mean[c] = mu;
      inv_std[c] = T(1) / std::sqrt(var + eps);
      state.running_mean[c] = (T(1) - momentum) * state.running_mean[c] + momentum * mu;
      state.running_var[c] = (T(1) - momentum) * state.running_var[c] + momentum * var;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + eps);
    }
  }

  std::vector<T> v(x.numel());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = x.data().data() + (size_t(n) * C + c) * hw;
      T* dst = v.data() + (size_t(n) * C + c) * hw;
      T mu = mean[c], is = inv_std[c], ga = gamma.data()[c], be = beta.data()[c];
      for (size_t i = 0; i < hw; ++i) dst[i] = ga * (src[i] - mu) * is + be;
    }

  return make_result<T>(
      x.shape(), std::move(v), {x, gamma, beta},
      [x, gamma, beta, mean, inv_std, training, N, C, hw, m](Node<T>& n) mutable {
        for (int c = 0; c < C; ++c) {
          T mu = mean[c], is = inv_std[c], ga = gamma.data()[c];
          // Channel sums of the output gradient and its correlation with
          // the normalized input.
          T s1 = 0, s2 = 0;
          for (int b = 0; b < N; ++b) {
            const T* g = n.grad.data() + (size_t(b) * C + c) * hw;
            const T* src = x.data().data() + (size_t(b) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) {
              s1 += g[i];
              s2 += g[i] * (src[i] - mu) * is;
            }
          }
          if (gamma.requires_grad()) gamma.grad()[c] += s2;
          if (beta.requires_grad()) beta.grad()[c] += s1;
          if (x.requires_grad()) {
            T inv_m = T(1) / static_cast<T>(m);
            for (int b = 0; b < N; ++b) {
              const T* g = n.grad.data() + (size_t(b) * C + c) * hw;
              const T* src = x.data().data() + (size_t(b) * C + c) * hw;
              T* gx = x.grad().data() + (size_t(b) * C + c) * hw;
              if (training) {
                for (size_t i = 0; i < hw; ++i) {
                  T xh = (src[i] - mu) * is;
                  gx[i] += ga * is * (g[i] - s1 * inv_m - xh * s2 * inv_m);
                }
              } else {
                for (size_t i = 0; i < hw; ++i) gx[i] += ga * is * g[i];
              }
            }
          }
        }
      });
}

/// Bilinear resize of NCHW to (Ho, Wo), sampling pixel centers (the
/// half-pixel convention, no corner alignment).
template <typename T>
Tensor<T> upsample_bilinear2d(Tensor<T> x, int Ho, int Wo) {
  require(x.shape().size() == 4, ErrorCode::ShapeMismatch, "upsample expects NCHW");
  require(Ho >= 1 && Wo >= 1, ErrorCode::ShapeMismatch, "bad target size");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);

  struct Axis {
    std::vector<int> i0, i1;
    std::vector<T> w1;
  };
  auto make_axis = [](int in, int out) {
    Axis a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.w1.resize(out);
    double scale = double(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      if (src > in - 1) src = in - 1;
      int lo = static_cast<int>(src);
      a.i0[o] = lo;
      a.i1[o] = std::min(lo + 1, in - 1);
      a.w1[o] = static_cast<T>(src - lo);
    }
    return a;
  };
  Axis ay = make_axis(H, Ho), ax = make_axis(W, Wo);

  std::vector<T> v(size_t(N) * C * Ho * Wo);
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = x.data().data() + size_t(nc) * H * W;
    T* out = v.data() + size_t(nc) * Ho * Wo;
    for (int oy = 0; oy < Ho; ++oy) {
      const T* r0 = plane + size_t(ay.i0[oy]) * W;
      const T* r1 = plane + size_t(ay.i1[oy]) * W;
      T wy = ay.w1[oy];
      for (int ox = 0; ox < Wo; ++ox) {
        T wx = ax.w1[ox];
        T top = r0[ax.i0[ox]] * (T(1) - wx) + r0[ax.i1[ox]] * wx;
        T bot = r1[ax.i0[ox]] * (T(1) - wx) + r1[ax.i1[ox]] * wx;
        out[size_t(oy) * Wo + ox] = top * (T(1) - wy) + bot * wy;
      }
    }
  }
  return make_result<T>({N, C, Ho, Wo}, std::move(v),
                        {x}, [x, ay, ax, N, C, H, W, Ho, Wo](Node<T>& n) mutable {
                          for (int nc = 0; nc < N * C; ++nc) {
                            const T* g = n.grad.data() + size_t(nc) * Ho * Wo;
                            T* plane = x.grad().data() + size_t(nc) * H * W;
                            for (int oy = 0; oy < Ho; ++oy) {
                              T wy = ay.w1[oy];
                              T* r0 = plane + size_t(ay.i0[oy]) * W;
                              T* r1 = plane + size_t(ay.i1[oy]) * W;
                              for (int ox = 0; ox < Wo; ++ox) {
                                T wx = ax.w1[ox];
                                T gv = g[size_t(oy) * Wo + ox];
                                r0[ax.i0[ox]] += gv * (T(1) - wy) * (T(1) - wx);
                                r0[ax.i1[ox]] += gv * (T(1) - wy) * wx;
                                r1[ax.i0[ox]] += gv * wy * (T(1) - wx);
                                r1[ax.i1[ox]] += gv * wy * wx;
                              }
                            }
                          }
                        });
}

/// Channel softmax of NCHW logits.
template <typename T>
Tensor<T> softmax_channels(Tensor<T> x) {
  require(x.shape().size() == 4, ErrorCode::ShapeMismatch, "softmax expects NCHW");
  int N = x.dim(0), K = x.dim(1);
  size_t hw = size_t(x.dim(2)) * x.dim(3);
  std::vector<T> v(x.numel());
  for (int n = 0; n < N; ++n)
    for (size_t p = 0; p < hw; ++p) {
      size_t base = size_t(n) * K * hw + p;
      T mx = x.data()[base];
      for (int k = 1; k < K; ++k) mx = std::max(mx, x.data()[base + size_t(k) * hw]);
      T denom = 0;
      for (int k = 0; k < K; ++k) {
        T e = std::exp(x.data()[base + size_t(k) * hw] - mx);
        v[base + size_t(k) * hw] = e;
        denom += e;
      }
      for (int k = 0; k < K; ++k) v[base + size_t(k) * hw] /= denom;
    }
  return make_result<T>(x.shape(), std::move(v), {x}, [x, N, K, hw](Node<T>& n) mutable {
    for (int b = 0; b < N; ++b)
      for (size_t p = 0; p < hw; ++p) {
        size_t base = size_t(b) * K * hw + p;
        T dot = 0;
        for (int k = 0; k < K; ++k) dot += n.grad[base + size_t(k) * hw] * n.value[base + size_t(k) * hw];
        for (int k = 0; k < K; ++k) {
          size_t i = base + size_t(k) * hw;
          x.grad()[i] += n.value[i] * (n.grad[i] - dot);
        }
      }
  });
}

/// Mean cross-entropy between logits [N,K,H,W] and integer labels of
/// length N*H*W, fused with log-softmax for stability.
template <typename T>
Tensor<T> cross_entropy(Tensor<T> logits, const std::vector<int>& labels) {
  require(logits.shape().size() == 4, ErrorCode::ShapeMismatch, "cross_entropy expects NCHW");
  int N = logits.dim(0), K = logits.dim(1);
  size_t hw = size_t(logits.dim(2)) * logits.dim(3);
  require(labels.size() == size_t(N) * hw, ErrorCode::ShapeMismatch,
          "label count does not match logit positions");
  size_t count = labels.size();

  // Probabilities are kept for the backward pass; they are cheap next to
  // the rest of the graph.
  std::vector<T> probs(logits.numel());
  T loss = 0;
  for (int n = 0; n < N; ++n)
    for (size_t p = 0; p < hw; ++p) {
      int label = labels[size_t(n) * hw + p];
      require(label >= 0 && label < K, ErrorCode::LabelOutOfRange,
              "label " + std::to_string(label) + " outside [0, " + std::to_string(K) + ")");
      size_t base = size_t(n) * K * hw + p;
      T mx = logits.data()[base];
      for (int k = 1; k < K; ++k) mx = std::max(mx, logits.data()[base + size_t(k) * hw]);
      T denom = 0;
      for (int k = 0; k < K; ++k) {
        T e = std::exp(logits.data()[base + size_t(k) * hw] - mx);
        probs[base + size_t(k) * hw] = e;
        denom += e;
      }
      for (int k = 0; k < K; ++k) probs[base + size_t(k) * hw] /= denom;
      loss += std::log(denom) + mx - logits.data()[base + size_t(label) * hw];
    }
  loss /= static_cast<T>(count);

  return make_result<T>(
      {1}, {loss}, {logits}, [logits, labels, probs, N, K, hw, count](Node<T>& n) mutable {
        T g = n.grad[0] / static_cast<T>(count);
        for (int b = 0; b < N; ++b)
          for (size_t p = 0; p < hw; ++p) {
            int label = labels[size_t(b) * hw + p];
            size_t base = size_t(b) * K * hw + p;
            for (int k = 0; k < K; ++k) {
              size_t i = base + size_t(k) * hw;
              logits.grad()[i] += g * (probs[i] - (k == label ? T(1) : T(0)));
            }
          }
      });
}

/// Mean squared error between same-shape tensors.
template <typename T>
Tensor<T> mse(Tensor<T> a, Tensor<T> b) {
  detail::check_same_shape(a, b, "mse");
  require(a.numel() > 0, ErrorCode::ShapeMismatch, "mse of empty tensors");
  T inv = T(1) / static_cast<T>(a.numel());
  T acc = 0;
  for (size_t i = 0; i < a.numel(); ++i) {
    T d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  acc *= inv;
  return make_result<T>({1}, {acc}, {a, b}, [a, b, inv](Node<T>& n) mutable {
    T g = n.grad[0] * inv * T(2);
    if (a.requires_grad())
      for (size_t i = 0; i < a.numel(); ++i) a.grad()[i] += g * (a.data()[i] - b.data()[i]);
    if (b.requires_grad())
      for (size_t i = 0; i < b.numel(); ++i) b.grad()[i] -= g * (a.data()[i] - b.data()[i]);
  });
}

/// Per-channel bias over NCHW.
template <typename T>
Tensor<T> add_bias(Tensor<T> x, Tensor<T> b) {
  require(x.shape().size() == 4, ErrorCode::ShapeMismatch, "add_bias expects NCHW");
  int N = x.dim(0), C = x.dim(1);
  size_t hw = size_t(x.dim(2)) * x.dim(3);
  require(b.shape() == Shape{C}, ErrorCode::ShapeMismatch,
          "bias shape " + shape_str(b.shape()) + " does not match " + std::to_string(C) +
              " channels");
  std::vector<T> v(x.numel());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = x.data().data() + (size_t(n) * C + c) * hw;
      T* dst = v.data() + (size_t(n) * C + c) * hw;
      T bc = b.data()[c];
      for (size_t i = 0; i < hw; ++i) dst[i] = src[i] + bc;
    }
  return make_result<T>(x.shape(), std::move(v), {x, b}, [x, b, N, C, hw](Node<T>& n) mutable {
    if (x.requires_grad())
      for (size_t i = 0; i < n.grad.size(); ++i) x.grad()[i] += n.grad[i];
    if (b.requires_grad())
      for (int nn = 0; nn < N; ++nn)
        for (int c = 0; c < C; ++c) {
          const T* g = n.grad.data() + (size_t(nn) * C + c) * hw;
          T acc = 0;
          for (size_t i = 0; i < hw; ++i) acc += g[i];
          b.grad()[c] += acc;
        }
  });
}

}  // namespace bapn::nn
