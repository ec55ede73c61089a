#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "ivf/rng.hpp"
#include "ivf/tensor.hpp"

// Layer primitives with explicit backward passes. All GEMMs go through Eigen
// (single-threaded); batch-level parallelism lives in the trainer.
namespace ivf::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

// Scratch buffers reused across conv calls within one thread.
template <class T>
struct Workspace {
  AlignedVec<T> col;
  AlignedVec<T> col2;
  void ensure(size_t n) {
    if (col.size() < n) col.resize(n);
  }
  void ensure2(size_t n) {
    if (col2.size() < n) col2.resize(n);
  }
};

inline int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// x[Cin,H,W] -> col[Cin*k*k, Ho*Wo], column-major (each output position is one
// column). Zero padding.
template <class T>
void im2col(const TensorT<T>& x, int k, int stride, int pad, int ho, int wo, T* col) {
  const int H = x.h, W = x.w;
  const size_t n_out = static_cast<size_t>(ho) * wo;
  for (int c = 0; c < x.c; ++c) {
    const T* plane = x.data() + static_cast<size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const size_t row = (static_cast<size_t>(c) * k + ky) * k + kx;
        T* out = col + row;  // stride n_rows between consecutive... (column-major: row index varies fastest)
        // column-major layout: element (row, col_idx) at col[col_idx * n_rows + row]
        const size_t n_rows = static_cast<size_t>(x.c) * k * k;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          const bool y_ok = iy >= 0 && iy < H;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            const size_t ci = static_cast<size_t>(oy) * wo + ox;
            out[ci * n_rows] = (y_ok && ix >= 0 && ix < W) ? plane[static_cast<size_t>(iy) * W + ix] : T(0);
          }
        }
        (void)n_out;
      }
    }
  }
}

// Scatter-add transpose of im2col.
template <class T>
void col2im_add(const T* col, int cin, int k, int stride, int pad, int ho, int wo, TensorT<T>& dx) {
  const int H = dx.h, W = dx.w;
  const size_t n_rows = static_cast<size_t>(cin) * k * k;
  for (int c = 0; c < cin; ++c) {
    T* plane = dx.data() + static_cast<size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const size_t row = (static_cast<size_t>(c) * k + ky) * k + kx;
        const T* in = col + row;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            plane[static_cast<size_t>(iy) * W + ix] += in[(static_cast<size_t>(oy) * wo + ox) * n_rows];
          }
        }
      }
    }
  }
}

enum class Init { projection, conv_block, zeros };

template <class T>
struct ConvLayer {
  int in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0;
  AlignedVec<T> w;  // [out_c, in_c*k*k] row-major
  AlignedVec<T> b;  // [out_c]

  void configure(int in_c_, int out_c_, int k_, int stride_ = 1) {
    in_c = in_c_;
    out_c = out_c_;
    k = k_;
    stride = stride_;
    pad = (k_ - 1) / 2;
    w.assign(static_cast<size_t>(out_c) * in_c * k * k, T(0));
    b.assign(out_c, T(0));
  }

  // Projections (1x1 attention/head convs) use truncated normal std 0.02;
  // conv blocks use fan-in scaled truncated normal. Biases start at zero.
  void init(Rng& rng, Init kind) {
    double std = 0.0;
    if (kind == Init::projection) std = 0.02;
    if (kind == Init::conv_block) std = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
    for (auto& x : w) x = static_cast<T>(std == 0.0 ? 0.0 : rng.truncated_normal(std));
    for (auto& x : b) x = T(0);
  }

  size_t weight_count() const { return w.size() + b.size(); }
};

template <class T>
struct ConvGrad {
  AlignedVec<T> dw, db;
  void init_like(const ConvLayer<T>& l) {
    dw.assign(l.w.size(), T(0));
    db.assign(l.b.size(), T(0));
  }
};

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const ConvLayer<T>& l, Workspace<T>& ws) {
  if (x.c != l.in_c) throw ShapeError("conv2d: input channels " + x.shape_str());
  const int ho = conv_out_dim(x.h, l.k, l.stride, l.pad);
  const int wo = conv_out_dim(x.w, l.k, l.stride, l.pad);
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: input too small " + x.shape_str());
  TensorT<T> y(l.out_c, ho, wo);
  const size_t n = static_cast<size_t>(ho) * wo;
  const size_t kk = static_cast<size_t>(l.in_c) * l.k * l.k;

  Eigen::Map<const RowMat<T>> W(l.w.data(), l.out_c, kk);
  Eigen::Map<RowMat<T>> Y(y.data(), l.out_c, n);
  if (l.k == 1 && l.stride == 1) {
    Eigen::Map<const RowMat<T>> X(x.data(), l.in_c, n);
    Y.noalias() = W * X;
  } else {
    ws.ensure(kk * n);
    im2col(x, l.k, l.stride, l.pad, ho, wo, ws.col.data());
    Eigen::Map<const ColMat<T>> C(ws.col.data(), kk, n);
    Y.noalias() = W * C;
  }
  for (int oc = 0; oc < l.out_c; ++oc) Y.row(oc).array() += l.b[oc];
  return y;
}

// dx is accumulated (+=) when non-null; dw/db always accumulate.
template <class T>
void conv2d_backward(const TensorT<T>& x, const ConvLayer<T>& l, const TensorT<T>& dy, TensorT<T>* dx,
                     ConvGrad<T>& g, Workspace<T>& ws) {
  const int ho = dy.h, wo = dy.w;
  const size_t n = static_cast<size_t>(ho) * wo;
  const size_t kk = static_cast<size_t>(l.in_c) * l.k * l.k;

  Eigen::Map<const RowMat<T>> dY(dy.data(), l.out_c, n);
  Eigen::Map<RowMat<T>> dW(g.dw.data(), l.out_c, kk);
  Eigen::Map<const RowMat<T>> W(l.w.data(), l.out_c, kk);

  for (int oc = 0; oc < l.out_c; ++oc) g.db[oc] += dY.row(oc).sum();

  if (l.k == 1 && l.stride == 1) {
    Eigen::Map<const RowMat<T>> X(x.data(), l.in_c, n);
    dW.noalias() += dY * X.transpose();
    if (dx) {
      Eigen::Map<RowMat<T>> dX(dx->data(), l.in_c, n);
      dX.noalias() += W.transpose() * dY;
    }
    return;
  }

  ws.ensure(kk * n);
  im2col(x, l.k, l.stride, l.pad, ho, wo, ws.col.data());
  Eigen::Map<const ColMat<T>> C(ws.col.data(), kk, n);
  dW.noalias() += dY * C.transpose();
  if (dx) {
    ws.ensure2(kk * n);
    Eigen::Map<ColMat<T>> dC(ws.col2.data(), kk, n);
    dC.noalias() = W.transpose() * dY;
    col2im_add(ws.col2.data(), l.in_c, l.k, l.stride, l.pad, ho, wo, *dx);
  }
}

template <class T>
void leaky_relu_inplace(TensorT<T>& x, T slope) {
  for (auto& v : x.v) v = v > T(0) ? v : slope * v;
}

// Uses the activation output; leaky relu preserves sign.
template <class T>
void leaky_relu_backward_inplace(const TensorT<T>& y, TensorT<T>& dy, T slope) {
  for (size_t i = 0; i < y.v.size(); ++i)
    if (!(y.v[i] > T(0))) dy.v[i] *= slope;
}

template <class T>
void sigmoid_inplace(TensorT<T>& x) {
  for (auto& v : x.v) v = T(1) / (T(1) + std::exp(-v));
}

template <class T>
TensorT<T> sigmoid_backward(const TensorT<T>& y, const TensorT<T>& dy) {
  TensorT<T> dx(y.c, y.h, y.w);
  for (size_t i = 0; i < y.v.size(); ++i) dx.v[i] = dy.v[i] * y.v[i] * (T(1) - y.v[i]);
  return dx;
}

enum class PoolOp { avg, max };

inline int pool_start(int i, int in, int out) { return static_cast<int>(static_cast<int64_t>(i) * in / out); }
inline int pool_end(int i, int in, int out) {
  return static_cast<int>((static_cast<int64_t>(i + 1) * in + out - 1) / out);
}

// Adaptive pooling of [C,h,w] to [C,r,r]; argmax indices recorded for max mode.
template <class T>
TensorT<T> adaptive_pool(const TensorT<T>& x, int r, PoolOp op, std::vector<int>* argmax = nullptr) {
  if (x.h < r || x.w < r)
    throw ConfigError("pool size r=" + std::to_string(r) + " exceeds feature map " + x.shape_str());
  TensorT<T> y(x.c, r, r);
  if (argmax) argmax->assign(y.size(), 0);
  for (int c = 0; c < x.c; ++c)
    for (int py = 0; py < r; ++py) {
      const int y0 = pool_start(py, x.h, r), y1 = pool_end(py, x.h, r);
      for (int px = 0; px < r; ++px) {
        const int x0 = pool_start(px, x.w, r), x1 = pool_end(px, x.w, r);
        if (op == PoolOp::avg) {
          double s = 0;
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix) s += x.at(c, iy, ix);
          y.at(c, py, px) = static_cast<T>(s / ((y1 - y0) * (x1 - x0)));
        } else {
          T best = x.at(c, y0, x0);
          int best_i = y0 * x.w + x0;
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix)
              if (x.at(c, iy, ix) > best) {
                best = x.at(c, iy, ix);
                best_i = iy * x.w + ix;
              }
          y.at(c, py, px) = best;
          if (argmax) (*argmax)[(static_cast<size_t>(c) * r + py) * r + px] = best_i;
        }
      }
    }
  return y;
}

template <class T>
void adaptive_pool_backward(const TensorT<T>& dy, int in_h, int in_w, PoolOp op, const std::vector<int>& argmax,
                            TensorT<T>& dx) {
  const int r = dy.h;
  for (int c = 0; c < dy.c; ++c)
    for (int py = 0; py < r; ++py) {
      const int y0 = pool_start(py, in_h, r), y1 = pool_end(py, in_h, r);
      for (int px = 0; px < r; ++px) {
        const int x0 = pool_start(px, in_w, r), x1 = pool_end(px, in_w, r);
        const T g = dy.at(c, py, px);
        if (op == PoolOp::avg) {
          const T share = g / static_cast<T>((y1 - y0) * (x1 - x0));
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix) dx.at(c, iy, ix) += share;
        } else {
          const int idx = argmax[(static_cast<size_t>(c) * r + py) * r + px];
          dx.data()[static_cast<size_t>(c) * in_h * in_w + idx] += g;
        }
      }
    }
}

// Bilinear resize, half-pixel centers (align_corners=false).
struct BilinearCoeff {
  std::vector<int> i0, i1;
  std::vector<float> f;  // weight of i1
};

inline BilinearCoeff bilinear_coeff(int in, int out) {
  BilinearCoeff c;
  c.i0.resize(out);
  c.i1.resize(out);
  c.f.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double s = (o + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    if (s > in - 1) s = in - 1;
    const int i0 = static_cast<int>(s);
    c.i0[o] = i0;
    c.i1[o] = i0 + 1 < in ? i0 + 1 : in - 1;
    c.f[o] = static_cast<float>(s - i0);
  }
  return c;
}

template <class T>
TensorT<T> bilinear_resize(const TensorT<T>& x, int oh, int ow) {
  const BilinearCoeff ry = bilinear_coeff(x.h, oh);
  const BilinearCoeff rx = bilinear_coeff(x.w, ow);
  TensorT<T> y(x.c, oh, ow);
  for (int c = 0; c < x.c; ++c)
    for (int i = 0; i < oh; ++i) {
      const T fy = static_cast<T>(ry.f[i]);
      for (int j = 0; j < ow; ++j) {
        const T fx = static_cast<T>(rx.f[j]);
        const T a = x.at(c, ry.i0[i], rx.i0[j]), b = x.at(c, ry.i0[i], rx.i1[j]);
        const T d = x.at(c, ry.i1[i], rx.i0[j]), e = x.at(c, ry.i1[i], rx.i1[j]);
        y.at(c, i, j) = (T(1) - fy) * ((T(1) - fx) * a + fx * b) + fy * ((T(1) - fx) * d + fx * e);
      }
    }
  return y;
}

template <class T>
void bilinear_resize_backward(const TensorT<T>& dy, int in_h, int in_w, TensorT<T>& dx) {
  const BilinearCoeff ry = bilinear_coeff(in_h, dy.h);
  const BilinearCoeff rx = bilinear_coeff(in_w, dy.w);
  for (int c = 0; c < dy.c; ++c)
    for (int i = 0; i < dy.h; ++i) {
      const T fy = static_cast<T>(ry.f[i]);
      for (int j = 0; j < dy.w; ++j) {
        const T fx = static_cast<T>(rx.f[j]);
        const T g = dy.at(c, i, j);
        dx.at(c, ry.i0[i], rx.i0[j]) += (T(1) - fy) * (T(1) - fx) * g;
        dx.at(c, ry.i0[i], rx.i1[j]) += (T(1) - fy) * fx * g;
        dx.at(c, ry.i1[i], rx.i0[j]) += fy * (T(1) - fx) * g;
        dx.at(c, ry.i1[i], rx.i1[j]) += fy * fx * g;
      }
    }
}

// Scaled dot-product attention. Q is [C,N] (channels x query tokens), pooled
// keys/values are [C,R]. Softmax runs over the R key axis per query row.
// probs (heads x N x R, flattened) is cached for the backward pass.
template <class T>
TensorT<T> attention(const TensorT<T>& q, const TensorT<T>& kp, const TensorT<T>& vp, int heads,
                     std::vector<T>& probs) {
  const int C = q.c;
  const size_t N = q.plane();
  const size_t R = kp.plane();
  if (C % heads != 0) throw ConfigError("attention: channels not divisible by heads");
  const int d = C / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

  TensorT<T> out(q.c, q.h, q.w);
  probs.assign(static_cast<size_t>(heads) * N * R, T(0));
  for (int hd = 0; hd < heads; ++hd) {
    Eigen::Map<const RowMat<T>> Qh(q.data() + static_cast<size_t>(hd) * d * N, d, N);
    Eigen::Map<const RowMat<T>> Kh(kp.data() + static_cast<size_t>(hd) * d * R, d, R);
    Eigen::Map<const RowMat<T>> Vh(vp.data() + static_cast<size_t>(hd) * d * R, d, R);
    Eigen::Map<RowMat<T>> P(probs.data() + static_cast<size_t>(hd) * N * R, N, R);
    P.noalias() = Qh.transpose() * Kh;
    P *= scale;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      auto row = P.row(i);
      const T m = row.maxCoeff();
      row = (row.array() - m).exp();
      row /= row.sum();
    }
    Eigen::Map<RowMat<T>> Oh(out.data() + static_cast<size_t>(hd) * d * N, d, N);
    Oh.noalias() = Vh * P.transpose();
  }
  return out;
}

template <class T>
void attention_backward(const TensorT<T>& q, const TensorT<T>& kp, const TensorT<T>& vp, int heads,
                        const std::vector<T>& probs, const TensorT<T>& dout, TensorT<T>& dq, TensorT<T>& dkp,
                        TensorT<T>& dvp) {
  const int C = q.c;
  const size_t N = q.plane();
  const size_t R = kp.plane();
  const int d = C / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

  for (int hd = 0; hd < heads; ++hd) {
    Eigen::Map<const RowMat<T>> Qh(q.data() + static_cast<size_t>(hd) * d * N, d, N);
    Eigen::Map<const RowMat<T>> Kh(kp.data() + static_cast<size_t>(hd) * d * R, d, R);
    Eigen::Map<const RowMat<T>> Vh(vp.data() + static_cast<size_t>(hd) * d * R, d, R);
    Eigen::Map<const RowMat<T>> P(probs.data() + static_cast<size_t>(hd) * N * R, N, R);
    Eigen::Map<const RowMat<T>> dOh(dout.data() + static_cast<size_t>(hd) * d * N, d, N);
    Eigen::Map<RowMat<T>> dQh(dq.data() + static_cast<size_t>(hd) * d * N, d, N);
    Eigen::Map<RowMat<T>> dKh(dkp.data() + static_cast<size_t>(hd) * d * R, d, R);
    Eigen::Map<RowMat<T>> dVh(dvp.data() + static_cast<size_t>(hd) * d * R, d, R);

    dVh.noalias() += dOh * P;
    RowMat<T> dP = dOh.transpose() * Vh;  // [N,R]
    // softmax backward per row
    for (Eigen::Index i = 0; i < dP.rows(); ++i) {
      const T dot = dP.row(i).cwiseProduct(P.row(i)).sum();
      dP.row(i) = ((dP.row(i).array() - dot) * P.row(i).array()).matrix();
    }
    dP *= scale;
    dQh.noalias() += Kh * dP.transpose();
    dKh.noalias() += Qh * dP;
  }
}

// Symmetric (edge-repeating) pad to multiples of `m` on the right/bottom.
struct PadInfo {
  int orig_h = 0, orig_w = 0;
};

template <class T>
TensorT<T> pad_to_multiple(const TensorT<T>& x, int m, PadInfo& info) {
  info.orig_h = x.h;
  info.orig_w = x.w;
  const int H = (x.h + m - 1) / m * m;
  const int W = (x.w + m - 1) / m * m;
  if (H == x.h && W == x.w) return x;
  TensorT<T> y(x.c, H, W);
  for (int c = 0; c < x.c; ++c)
    for (int i = 0; i < H; ++i) {
      int si = i < x.h ? i : 2 * x.h - 1 - i;
      if (si < 0) si = 0;
      for (int j = 0; j < W; ++j) {
        int sj = j < x.w ? j : 2 * x.w - 1 - j;
        if (sj < 0) sj = 0;
        y.at(c, i, j) = x.at(c, si, sj);
      }
    }
  return y;
}

template <class T>
TensorT<T> crop_to(const TensorT<T>& x, const PadInfo& info) {
  if (x.h == info.orig_h && x.w == info.orig_w) return x;
  TensorT<T> y(x.c, info.orig_h, info.orig_w);
  for (int c = 0; c < x.c; ++c)
    for (int i = 0; i < info.orig_h; ++i)
      for (int j = 0; j < info.orig_w; ++j) y.at(c, i, j) = x.at(c, i, j);
  return y;
}

template <class T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.h != b.h || a.w != b.w) throw ShapeError("concat: " + a.shape_str() + " vs " + b.shape_str());
  TensorT<T> y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + a.v.size());
  return y;
}

template <class T>
void split_channels_add(const TensorT<T>& dy, TensorT<T>& da, TensorT<T>& db) {
  for (size_t i = 0; i < da.v.size(); ++i) da.v[i] += dy.v[i];
  for (size_t i = 0; i < db.v.size(); ++i) db.v[i] += dy.v[i + da.v.size()];
}

}  // namespace ivf::nn
