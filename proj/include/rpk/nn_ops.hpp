#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "rpk/autodiff.hpp"
#include "rpk/tensor.hpp"

// Convolution, transposed convolution, max pooling and batch normalization:
// the raw kernels plus their tape wrappers. Convolutions are im2col + GEMM;
// the column matrix is rebuilt in the backward pass instead of cached.

namespace rpk {

inline int conv_out_extent(int in, int k, int stride, int pad) {
  const int num = in + 2 * pad - k;
  if (num < 0 || num % stride != 0)
    throw ShapeError("conv: input extent does not tile with kernel/stride/pad");
  return num / stride + 1;
}

namespace detail {

template <typename Scalar>
using MatMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename Scalar>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>;

// cols is (C*k*k) x (Ho*Wo), column-major; column = one output position.
template <typename Scalar>
void im2col(const Scalar* x, int C, int H, int W, int k, int stride, int pad,
            int Ho, int Wo, Scalar* cols) {
  Eigen::Index col = 0;
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox, ++col) {
      Scalar* dst = cols + col * (static_cast<Eigen::Index>(C) * k * k);
      for (int c = 0; c < C; ++c) {
        const Scalar* xc = x + static_cast<Eigen::Index>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < k; ++kx, ++dst) {
            const int ix = ox * stride - pad + kx;
            *dst = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                       ? xc[static_cast<Eigen::Index>(iy) * W + ix]
                       : Scalar(0);
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
template <typename Scalar>
void col2im(const Scalar* cols, int C, int H, int W, int k, int stride, int pad,
            int Ho, int Wo, Scalar* x) {
  Eigen::Index col = 0;
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox, ++col) {
      const Scalar* src = cols + col * (static_cast<Eigen::Index>(C) * k * k);
      for (int c = 0; c < C; ++c) {
        Scalar* xc = x + static_cast<Eigen::Index>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < k; ++kx, ++src) {
            const int ix = ox * stride - pad + kx;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              xc[static_cast<Eigen::Index>(iy) * W + ix] += *src;
          }
        }
      }
    }
  }
}

// y[B,Ho,Wo] = W[B,A,k,k] * x[A,H,W] + b. Accumulates into y (callers zero it).
template <typename Scalar>
void conv_fwd_one(const Scalar* x, const Scalar* w, const Scalar* b, int A,
                  int H, int W, int B, int k, int stride, int pad, int Ho,
                  int Wo, Scalar* y, std::vector<Scalar>& scratch) {
  const Eigen::Index ckk = static_cast<Eigen::Index>(A) * k * k;
  const Eigen::Index hw = static_cast<Eigen::Index>(Ho) * Wo;
  scratch.resize(static_cast<std::size_t>(ckk * hw));
  im2col(x, A, H, W, k, stride, pad, Ho, Wo, scratch.data());
  ConstMatMap<Scalar> cols(scratch.data(), ckk, hw);
  ConstMatMap<Scalar> wm(w, ckk, B);  // [B,A,k,k] row-major == (ckk x B) col-major
  MatMap<Scalar> ym(y, hw, B);
  ym.noalias() += cols.transpose() * wm;
  if (b)
    for (int co = 0; co < B; ++co) ym.col(co).array() += b[co];
}

// dx[A,H,W] += W^T * dy[B,Ho,Wo].
template <typename Scalar>
void conv_bwd_data_one(const Scalar* dy, const Scalar* w, int A, int H, int W,
                       int B, int k, int stride, int pad, int Ho, int Wo,
                       Scalar* dx, std::vector<Scalar>& scratch) {
  const Eigen::Index ckk = static_cast<Eigen::Index>(A) * k * k;
  const Eigen::Index hw = static_cast<Eigen::Index>(Ho) * Wo;
  scratch.resize(static_cast<std::size_t>(ckk * hw));
  MatMap<Scalar> cols(scratch.data(), ckk, hw);
  ConstMatMap<Scalar> wm(w, ckk, B);
  ConstMatMap<Scalar> dym(dy, hw, B);
  cols.noalias() = wm * dym.transpose();
  col2im(scratch.data(), A, H, W, k, stride, pad, Ho, Wo, dx);
}

// dW += dy * patches(x)^T; db += column sums of dy.
template <typename Scalar>
void conv_bwd_weights_one(const Scalar* x, const Scalar* dy, int A, int H,
                          int W, int B, int k, int stride, int pad, int Ho,
                          int Wo, Scalar* dw, Scalar* db,
                          std::vector<Scalar>& scratch) {
  const Eigen::Index ckk = static_cast<Eigen::Index>(A) * k * k;
  const Eigen::Index hw = static_cast<Eigen::Index>(Ho) * Wo;
  scratch.resize(static_cast<std::size_t>(ckk * hw));
  im2col(x, A, H, W, k, stride, pad, Ho, Wo, scratch.data());
  ConstMatMap<Scalar> cols(scratch.data(), ckk, hw);
  ConstMatMap<Scalar> dym(dy, hw, B);
  MatMap<Scalar> dwm(dw, ckk, B);
  dwm.noalias() += cols * dym;
  if (db)
    for (int co = 0; co < B; ++co) db[co] += dym.col(co).sum();
}

}  // namespace detail

// Convolution, weight layout [Cout, Cin, k, k], bias [1, Cout, 1, 1].
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w,
                   const Var<Scalar>& b, int stride, int pad) {
  const int N = x->val.n(), A = x->val.c(), H = x->val.h(), W = x->val.w();
  const int B = w->val.n(), k = w->val.h();
  if (w->val.c() != A) throw ShapeError("conv2d: channel mismatch");
  const int Ho = conv_out_extent(H, k, stride, pad);
  const int Wo = conv_out_extent(W, k, stride, pad);
  Tensor<Scalar> out(N, B, Ho, Wo);
  std::vector<Scalar> scratch;
  for (int n = 0; n < N; ++n)
    detail::conv_fwd_one(x->val.plane(n, 0), w->val.data(), b->val.data(), A, H,
                         W, B, k, stride, pad, Ho, Wo, out.plane(n, 0), scratch);
  auto node = std::make_shared<Node<Scalar>>();
  node->val = std::move(out);
  node->parents = {x, w, b};
  node->requires_grad = x->requires_grad || w->requires_grad || b->requires_grad;
  if (node->requires_grad)
    node->backprop = [stride, pad](Node<Scalar>& self) {
      auto& x_ = *self.parents[0];
      auto& w_ = *self.parents[1];
      auto& b_ = *self.parents[2];
      const int N_ = x_.val.n(), A_ = x_.val.c(), H_ = x_.val.h(), W_ = x_.val.w();
      const int B_ = w_.val.n(), k_ = w_.val.h();
      const int Ho_ = self.val.h(), Wo_ = self.val.w();
      std::vector<Scalar> scratch;
      if (x_.requires_grad) {
        x_.ensure_grad();
        for (int n = 0; n < N_; ++n)
          detail::conv_bwd_data_one(self.grad.plane(n, 0), w_.val.data(), A_, H_,
                                    W_, B_, k_, stride, pad, Ho_, Wo_,
                                    x_.grad.plane(n, 0), scratch);
      }
      if (w_.requires_grad || b_.requires_grad) {
        w_.ensure_grad();
        b_.ensure_grad();
        for (int n = 0; n < N_; ++n)
          detail::conv_bwd_weights_one(x_.val.plane(n, 0), self.grad.plane(n, 0),
                                       A_, H_, W_, B_, k_, stride, pad, Ho_, Wo_,
                                       w_.grad.data(), b_.grad.data(), scratch);
      }
    };
  return node;
}

// Transposed convolution, weight layout [Cin, Cout, k, k] (data adjoint of a
// conv with that same weight). Output extent: (in-1)*stride + k - 2*pad.
template <typename Scalar>
Var<Scalar> conv_transpose2d(const Var<Scalar>& x, const Var<Scalar>& w,
                             const Var<Scalar>& b, int stride, int pad) {
  const int N = x->val.n(), Ci = x->val.c(), Hi = x->val.h(), Wi = x->val.w();
  if (w->val.n() != Ci) throw ShapeError("conv_transpose2d: channel mismatch");
  const int Co = w->val.c(), k = w->val.h();
  const int Ho = (Hi - 1) * stride + k - 2 * pad;
  const int Wo = (Wi - 1) * stride + k - 2 * pad;
  if (Ho < 1 || Wo < 1) throw ShapeError("conv_transpose2d: empty output");
  Tensor<Scalar> out(N, Co, Ho, Wo);
  std::vector<Scalar> scratch;
  for (int n = 0; n < N; ++n) {
    detail::conv_bwd_data_one(x->val.plane(n, 0), w->val.data(), Co, Ho, Wo, Ci,
                              k, stride, pad, Hi, Wi, out.plane(n, 0), scratch);
    for (int c = 0; c < Co; ++c) {
      Scalar* p = out.plane(n, c);
      const Scalar bc = b->val.data()[c];
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(Ho) * Wo; ++i)
        p[i] += bc;
    }
  }
  auto node = std::make_shared<Node<Scalar>>();
  node->val = std::move(out);
  node->parents = {x, w, b};
  node->requires_grad = x->requires_grad || w->requires_grad || b->requires_grad;
  if (node->requires_grad)
    node->backprop = [stride, pad](Node<Scalar>& self) {
      auto& x_ = *self.parents[0];
      auto& w_ = *self.parents[1];
      auto& b_ = *self.parents[2];
      const int N_ = x_.val.n(), Ci_ = x_.val.c(), Hi_ = x_.val.h(),
                Wi_ = x_.val.w();
      const int Co_ = w_.val.c(), k_ = w_.val.h();
      const int Ho_ = self.val.h(), Wo_ = self.val.w();
      std::vector<Scalar> scratch;
      if (x_.requires_grad) {
        x_.ensure_grad();
        for (int n = 0; n < N_; ++n)
          detail::conv_fwd_one(self.grad.plane(n, 0), w_.val.data(),
                               static_cast<const Scalar*>(nullptr), Co_, Ho_, Wo_,
                               Ci_, k_, stride, pad, Hi_, Wi_,
                               x_.grad.plane(n, 0), scratch);
      }
      if (w_.requires_grad || b_.requires_grad) {
        w_.ensure_grad();
        b_.ensure_grad();
        for (int n = 0; n < N_; ++n) {
          // Same bilinear form as conv: swap data and output-grad roles.
          detail::conv_bwd_weights_one(self.grad.plane(n, 0), x_.val.plane(n, 0),
                                       Co_, Ho_, Wo_, Ci_, k_, stride, pad, Hi_,
                                       Wi_, w_.grad.data(),
                                       static_cast<Scalar*>(nullptr), scratch);
          for (int c = 0; c < Co_; ++c) {
            const Scalar* g = self.grad.plane(n, c);
            Scalar s = 0;
            for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(Ho_) * Wo_; ++i)
              s += g[i];
            b_.grad.data()[c] += s;
          }
        }
      }
    };
  return node;
}

// 2x2 max pooling, stride 2. Ties go to the first scanned element.
template <typename Scalar>
Var<Scalar> max_pool2(const Var<Scalar>& x) {
  const int N = x->val.n(), C = x->val.c(), H = x->val.h(), W = x->val.w();
  if (H % 2 != 0 || W % 2 != 0) throw ShapeError("max_pool2: odd extent");
  const int Ho = H / 2, Wo = W / 2;
  Tensor<Scalar> out(N, C, Ho, Wo);
  auto argmax = std::make_shared<std::vector<Eigen::Index>>(
      static_cast<std::size_t>(out.size()));
  Eigen::Index o = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Scalar* p = x->val.plane(n, c);
      const Eigen::Index base = (static_cast<Eigen::Index>(n) * C + c) * H * W;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox, ++o) {
          Scalar best = p[(2 * oy) * W + 2 * ox];
          Eigen::Index besti = (2 * oy) * static_cast<Eigen::Index>(W) + 2 * ox;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const Eigen::Index i =
                  (2 * oy + dy) * static_cast<Eigen::Index>(W) + 2 * ox + dx;
              if (p[i] > best) {
                best = p[i];
                besti = i;
              }
            }
          out.v[o] = best;
          (*argmax)[static_cast<std::size_t>(o)] = base + besti;
        }
    }
  return detail::unary<Scalar>(x, std::move(out), [argmax](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (Eigen::Index i = 0; i < self.val.size(); ++i)
      p.grad.v[(*argmax)[static_cast<std::size_t>(i)]] += self.grad.v[i];
  });
}

// Batch normalization over (N, H, W) per channel. gamma/beta are [1,C,1,1].
// When use_batch_stats is false, the supplied running stats make this a plain
// per-channel affine map. update_running folds the batch stats into the
// running buffers (a training side effect, not part of the graph).
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma,
                       const Var<Scalar>& beta, Tensor<Scalar>& running_mean,
                       Tensor<Scalar>& running_var, bool use_batch_stats,
                       bool update_running, Scalar momentum = Scalar(0.1),
                       Scalar eps = Scalar(1e-5)) {
  const int N = x->val.n(), C = x->val.c(), H = x->val.h(), W = x->val.w();
  const Eigen::Index hw = static_cast<Eigen::Index>(H) * W;
  const Eigen::Index m = static_cast<Eigen::Index>(N) * hw;
  auto mean = std::make_shared<std::vector<Scalar>>(C);
  auto inv = std::make_shared<std::vector<Scalar>>(C);
  Tensor<Scalar> out(N, C, H, W);
  for (int c = 0; c < C; ++c) {
    Scalar mu, var;
    if (use_batch_stats) {
      Scalar s = 0, s2 = 0;
      for (int n = 0; n < N; ++n) {
        const Scalar* p = x->val.plane(n, c);
        for (Eigen::Index i = 0; i < hw; ++i) {
          s += p[i];
          s2 += p[i] * p[i];
        }
      }
      mu = s / static_cast<Scalar>(m);
      var = s2 / static_cast<Scalar>(m) - mu * mu;
      if (var < 0) var = 0;
      if (update_running) {
        const Scalar unbiased =
            m > 1 ? var * static_cast<Scalar>(m) / static_cast<Scalar>(m - 1) : var;
        running_mean.v[c] = (Scalar(1) - momentum) * running_mean.v[c] + momentum * mu;
        running_var.v[c] = (Scalar(1) - momentum) * running_var.v[c] + momentum * unbiased;
      }
    } else {
      mu = running_mean.v[c];
      var = running_var.v[c];
    }
    (*mean)[c] = mu;
    (*inv)[c] = Scalar(1) / std::sqrt(var + eps);
    const Scalar g = gamma->val.v[c], bt = beta->val.v[c], iv = (*inv)[c];
    for (int n = 0; n < N; ++n) {
      const Scalar* p = x->val.plane(n, c);
      Scalar* q = out.plane(n, c);
      for (Eigen::Index i = 0; i < hw; ++i) q[i] = g * (p[i] - mu) * iv + bt;
    }
  }
  auto node = std::make_shared<Node<Scalar>>();
  node->val = std::move(out);
  node->parents = {x, gamma, beta};
  node->requires_grad =
      x->requires_grad || gamma->requires_grad || beta->requires_grad;
  if (node->requires_grad)
    node->backprop = [mean, inv, use_batch_stats](Node<Scalar>& self) {
      auto& x_ = *self.parents[0];
      auto& gamma_ = *self.parents[1];
      auto& beta_ = *self.parents[2];
      const int N_ = x_.val.n(), C_ = x_.val.c();
      const Eigen::Index hw_ =
          static_cast<Eigen::Index>(x_.val.h()) * x_.val.w();
      const Eigen::Index m_ = static_cast<Eigen::Index>(N_) * hw_;
      const bool need_x = x_.requires_grad;
      if (need_x) x_.ensure_grad();
      if (gamma_.requires_grad) gamma_.ensure_grad();
      if (beta_.requires_grad) beta_.ensure_grad();
      for (int c = 0; c < C_; ++c) {
        const Scalar mu = (*mean)[c], iv = (*inv)[c];
        const Scalar g = gamma_.val.v[c];
        Scalar sum_dy = 0, sum_dy_xhat = 0;
        for (int n = 0; n < N_; ++n) {
          const Scalar* dy = self.grad.plane(n, c);
          const Scalar* xp = x_.val.plane(n, c);
          for (Eigen::Index i = 0; i < hw_; ++i) {
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * (xp[i] - mu) * iv;
          }
        }
        if (gamma_.requires_grad) gamma_.grad.v[c] += sum_dy_xhat;
        if (beta_.requires_grad) beta_.grad.v[c] += sum_dy;
        if (!need_x) continue;
        if (use_batch_stats) {
          const Scalar k = g * iv / static_cast<Scalar>(m_);
          for (int n = 0; n < N_; ++n) {
            const Scalar* dy = self.grad.plane(n, c);
            const Scalar* xp = x_.val.plane(n, c);
            Scalar* dx = x_.grad.plane(n, c);
            for (Eigen::Index i = 0; i < hw_; ++i) {
              const Scalar xhat = (xp[i] - mu) * iv;
              dx[i] += k * (static_cast<Scalar>(m_) * dy[i] - sum_dy -
                            xhat * sum_dy_xhat);
            }
          }
        } else {
          for (int n = 0; n < N_; ++n) {
            const Scalar* dy = self.grad.plane(n, c);
            Scalar* dx = x_.grad.plane(n, c);
            for (Eigen::Index i = 0; i < hw_; ++i) dx[i] += g * iv * dy[i];
          }
        }
      }
    };
  return node;
}

}  // namespace rpk
