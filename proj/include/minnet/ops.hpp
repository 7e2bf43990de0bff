#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "minnet/tensor.hpp"

// Autodiff operation set. All kernels share one determinism contract:
// every output element is produced by exactly one thread and every
// reduction runs in a fixed sequential order, so results are bit-identical
// across runs and thread counts.

namespace minnet {

inline constexpr double kNormEps = 1e-5;

template <class T>
struct NormStateT {
  TensorT<T> gamma, beta;               // learnable, per channel
  std::vector<T> running_mean;          // updated in training mode only
  std::vector<T> running_var;
  T momentum = T(0.1);
  int64_t channels() const { return gamma.numel(); }
};

using NormState = NormStateT<float>;

namespace detail {

template <class T>
inline bool grad_path(const TensorT<T>& t) {
  return t.impl && (t.impl->requires_grad || t.impl->tracked);
}

template <class T>
inline bool taping(std::initializer_list<const TensorT<T>*> inputs) {
  if (!TapeT<T>::current()) return false;
  for (auto* p : inputs)
    if (grad_path(*p)) return true;
  return false;
}

// Output index range [lo, hi] for which o*stride + k_off - pad lands inside
// [0, in_extent). hi < lo means the tap never touches valid input.
inline void tap_range(int64_t out_extent, int64_t in_extent, int64_t k_off, int64_t stride,
                      int64_t pad, int64_t& lo, int64_t& hi) {
  int64_t a = pad - k_off;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  int64_t b = in_extent - 1 + pad - k_off;
  hi = b < 0 ? -1 : b / stride;
  if (hi > out_extent - 1) hi = out_extent - 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
  TensorT<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (detail::taping<T>({&a, &b})) {
    auto ai = a.impl, bi = b.impl, oi = out.impl;
    bool na = detail::grad_path(a), nb = detail::grad_path(b);
    TapeT<T>::current()->record({ai, bi}, oi, [ai, bi, oi, na, nb, n]() {
      const auto& g = oi->grad;
      if (na) {
        ai->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ai->grad[i] += g[i];
      }
      if (nb) {
        bi->ensure_grad();
        for (int64_t i = 0; i < n; ++i) bi->grad[i] += g[i];
      }
    });
  }
  return out;
}

// min(a, b) elementwise; ties route half the gradient to each input.
template <class T>
TensorT<T> elementwise_min(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("elementwise_min: shape mismatch");
  TensorT<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] < pb[i] ? pa[i] : pb[i];
  if (detail::taping<T>({&a, &b})) {
    auto ai = a.impl, bi = b.impl, oi = out.impl;
    bool na = detail::grad_path(a), nb = detail::grad_path(b);
    TapeT<T>::current()->record({ai, bi}, oi, [ai, bi, oi, na, nb, n]() {
      const auto& g = oi->grad;
      if (na) ai->ensure_grad();
      if (nb) bi->ensure_grad();
      const T* va = ai->values.data();
      const T* vb = bi->values.data();
      for (int64_t i = 0; i < n; ++i) {
        if (va[i] < vb[i]) {
          if (na) ai->grad[i] += g[i];
        } else if (vb[i] < va[i]) {
          if (nb) bi->grad[i] += g[i];
        } else {
          if (na) ai->grad[i] += T(0.5) * g[i];
          if (nb) bi->grad[i] += T(0.5) * g[i];
        }
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
  TensorT<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (detail::taping<T>({&a, &b})) {
    auto ai = a.impl, bi = b.impl, oi = out.impl;
    bool na = detail::grad_path(a), nb = detail::grad_path(b);
    TapeT<T>::current()->record({ai, bi}, oi, [ai, bi, oi, na, nb, n]() {
      const auto& g = oi->grad;
      if (na) {
        ai->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ai->grad[i] += g[i] * bi->values[i];
      }
      if (nb) {
        bi->ensure_grad();
        for (int64_t i = 0; i < n; ++i) bi->grad[i] += g[i] * ai->values[i];
      }
    });
  }
  return out;
}

// Subgradient at 0 is 0.
template <class T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  if (detail::taping<T>({&x})) {
    auto xi = x.impl, oi = out.impl;
    TapeT<T>::current()->record({xi}, oi, [xi, oi, n]() {
      xi->ensure_grad();
      const auto& g = oi->grad;
      const T* v = xi->values.data();
      for (int64_t i = 0; i < n; ++i)
        if (v[i] > T(0)) xi->grad[i] += g[i];
    });
  }
  return out;
}

// Reduces to a scalar; mostly used to build test losses.
template <class T>
TensorT<T> sum(const TensorT<T>& x) {
  TensorT<T> out({1});
  const T* px = x.data();
  T acc = T(0);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  out.data()[0] = acc;
  if (detail::taping<T>({&x})) {
    auto xi = x.impl, oi = out.impl;
    TapeT<T>::current()->record({xi}, oi, [xi, oi, n]() {
      xi->ensure_grad();
      const T g = oi->grad[0];
      for (int64_t i = 0; i < n; ++i) xi->grad[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution

namespace detail {

// Patch matrix for one image: cols[(ic*K+kh)*K+kw][oh*OW+ow] = x at the tap,
// zero where the tap falls into the padding.
template <class T>
void im2col(const T* x, T* cols, int64_t C, int64_t H, int64_t W, int64_t K, int64_t OH,
            int64_t OW, int64_t s, int64_t p) {
  const int64_t ohw = OH * OW;
  for (int64_t ic = 0; ic < C; ++ic) {
    for (int64_t kh = 0; kh < K; ++kh) {
      for (int64_t kw = 0; kw < K; ++kw) {
        T* row = cols + ((ic * K + kh) * K + kw) * ohw;
        int64_t oh_lo, oh_hi, ow_lo, ow_hi;
        tap_range(OH, H, kh, s, p, oh_lo, oh_hi);
        tap_range(OW, W, kw, s, p, ow_lo, ow_hi);
        std::fill_n(row, ohw, T(0));
        for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
          const int64_t xbase = (ic * H + oh * s + kh - p) * W + kw - p;
          T* r = row + oh * OW;
          if (s == 1) {
            for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) r[ow] = x[xbase + ow];
          } else {
            for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) r[ow] = x[xbase + ow * s];
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
template <class T>
void col2im_add(const T* cols, T* dx, int64_t C, int64_t H, int64_t W, int64_t K, int64_t OH,
                int64_t OW, int64_t s, int64_t p) {
  const int64_t ohw = OH * OW;
  for (int64_t ic = 0; ic < C; ++ic) {
    for (int64_t kh = 0; kh < K; ++kh) {
      for (int64_t kw = 0; kw < K; ++kw) {
        const T* row = cols + ((ic * K + kh) * K + kw) * ohw;
        int64_t oh_lo, oh_hi, ow_lo, ow_hi;
        tap_range(OH, H, kh, s, p, oh_lo, oh_hi);
        tap_range(OW, W, kw, s, p, ow_lo, ow_hi);
        for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
          const int64_t xbase = (ic * H + oh * s + kh - p) * W + kw - p;
          const T* r = row + oh * OW;
          for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) dx[xbase + ow * s] += r[ow];
        }
      }
    }
  }
}

template <class T>
void conv2d_fwd(const T* x, const T* w, T* y, int64_t N, int64_t C, int64_t H, int64_t W,
                int64_t O, int64_t K, int64_t OH, int64_t OW, int64_t s, int64_t p) {
  const int64_t ckk = C * K * K, ohw = OH * OW;
#pragma omp parallel
  {
    std::vector<T> cols(static_cast<size_t>(ckk * ohw));
#pragma omp for schedule(static)
    for (int64_t n = 0; n < N; ++n) {
      im2col(x + n * C * H * W, cols.data(), C, H, W, K, OH, OW, s, p);
      T* yn = y + n * O * ohw;
      for (int64_t o = 0; o < O; ++o) {
        T* row = yn + o * ohw;  // zero-initialized by the tensor constructor
        const T* wrow = w + o * ckk;
        for (int64_t kk = 0; kk < ckk; ++kk) {
          const T a = wrow[kk];
          const T* crow = cols.data() + kk * ohw;
          for (int64_t i = 0; i < ohw; ++i) row[i] += a * crow[i];
        }
      }
    }
  }
}

template <class T>
void conv2d_bwd_input(const T* dy, const T* w, T* dx, int64_t N, int64_t C, int64_t H, int64_t W,
                      int64_t O, int64_t K, int64_t OH, int64_t OW, int64_t s, int64_t p) {
  const int64_t ckk = C * K * K, ohw = OH * OW;
#pragma omp parallel
  {
    std::vector<T> dcols(static_cast<size_t>(ckk * ohw));
#pragma omp for schedule(static)
    for (int64_t n = 0; n < N; ++n) {
      std::fill(dcols.begin(), dcols.end(), T(0));
      const T* dyn = dy + n * O * ohw;
      for (int64_t o = 0; o < O; ++o) {
        const T* wrow = w + o * ckk;
        const T* dyrow = dyn + o * ohw;
        for (int64_t kk = 0; kk < ckk; ++kk) {
          const T a = wrow[kk];
          T* dc = dcols.data() + kk * ohw;
          for (int64_t i = 0; i < ohw; ++i) dc[i] += a * dyrow[i];
        }
      }
      col2im_add(dcols.data(), dx + n * C * H * W, C, H, W, K, OH, OW, s, p);
    }
  }
}

// Images stay sequential in the outer loop so each weight-gradient element
// accumulates in a fixed order regardless of thread count.
template <class T>
void conv2d_bwd_weight(const T* dy, const T* x, T* dw, int64_t N, int64_t C, int64_t H,
                       int64_t W, int64_t O, int64_t K, int64_t OH, int64_t OW, int64_t s,
                       int64_t p) {
  const int64_t ckk = C * K * K, ohw = OH * OW;
  std::vector<T> cols(static_cast<size_t>(ckk * ohw));
  for (int64_t n = 0; n < N; ++n) {
    im2col(x + n * C * H * W, cols.data(), C, H, W, K, OH, OW, s, p);
    const T* dyn = dy + n * O * ohw;
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < O; ++o) {
      const T* dyrow = dyn + o * ohw;
      T* dwrow = dw + o * ckk;
      for (int64_t kk = 0; kk < ckk; ++kk) {
        const T* crow = cols.data() + kk * ohw;
        T acc = T(0);
        for (int64_t i = 0; i < ohw; ++i) acc += dyrow[i] * crow[i];
        dwrow[kk] += acc;
      }
    }
  }
}

inline void conv_shape_check(int64_t H, int64_t W, int64_t K, int stride, int padding) {
  if (stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv: padding must be >= 0");
  if (K > H + 2 * padding || K > W + 2 * padding)
    throw std::invalid_argument("conv: kernel larger than padded input");
}

}  // namespace detail

// Cross-correlation, bias-free. x: NCHW, w: OIKK (square kernels).
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, int stride, int padding) {
  if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument("conv2d: expects 4-d tensors");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), K = w.dim(2);
  if (w.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
  if (w.dim(3) != K) throw std::invalid_argument("conv2d: kernels must be square");
  detail::conv_shape_check(H, W, K, stride, padding);
  const int64_t s = stride, p = padding;
  const int64_t OH = (H + 2 * p - K) / s + 1;
  const int64_t OW = (W + 2 * p - K) / s + 1;
  TensorT<T> out({N, O, OH, OW});
  detail::conv2d_fwd(x.data(), w.data(), out.data(), N, C, H, W, O, K, OH, OW, s, p);
  if (detail::taping<T>({&x, &w})) {
    auto xi = x.impl, wi = w.impl, oi = out.impl;
    bool nx = detail::grad_path(x), nw = detail::grad_path(w);
    TapeT<T>::current()->record({xi, wi}, oi, [=]() {
      const T* dy = oi->grad.data();
      if (nx) {
        xi->ensure_grad();
        detail::conv2d_bwd_input(dy, wi->values.data(), xi->grad.data(), N, C, H, W, O, K, OH,
                                 OW, s, p);
      }
      if (nw) {
        wi->ensure_grad();
        detail::conv2d_bwd_weight(dy, xi->values.data(), wi->grad.data(), N, C, H, W, O, K, OH,
                                  OW, s, p);
      }
    });
  }
  return out;
}

// One K x K filter per input channel; channel count preserved. w: C1KK.
template <class T>
TensorT<T> depthwise_conv2d(const TensorT<T>& x, const TensorT<T>& w, int stride, int padding) {
  if (x.rank() != 4 || w.rank() != 4)
    throw std::invalid_argument("depthwise_conv2d: expects 4-d tensors");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t K = w.dim(2);
  if (w.dim(0) != C || w.dim(1) != 1)
    throw std::invalid_argument("depthwise_conv2d: needs exactly one filter per input channel");
  if (w.dim(3) != K) throw std::invalid_argument("depthwise_conv2d: kernels must be square");
  detail::conv_shape_check(H, W, K, stride, padding);
  const int64_t s = stride, p = padding;
  const int64_t OH = (H + 2 * p - K) / s + 1;
  const int64_t OW = (W + 2 * p - K) / s + 1;
  TensorT<T> out({N, C, OH, OW});

  auto run_fwd = [=](const T* px, const T* pw, T* py) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        const T* xp = px + (n * C + c) * H * W;
        T* yp = py + (n * C + c) * OH * OW;
        for (int64_t kh = 0; kh < K; ++kh) {
          for (int64_t kw = 0; kw < K; ++kw) {
            const T wv = pw[(c * K + kh) * K + kw];
            int64_t oh_lo, oh_hi, ow_lo, ow_hi;
            detail::tap_range(OH, H, kh, s, p, oh_lo, oh_hi);
            detail::tap_range(OW, W, kw, s, p, ow_lo, ow_hi);
            for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
              const int64_t xbase = (oh * s + kh - p) * W + kw - p;
              T* yrow = yp + oh * OW;
              for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) yrow[ow] += wv * xp[xbase + ow * s];
            }
          }
        }
      }
    }
  };
  run_fwd(x.data(), w.data(), out.data());

  if (detail::taping<T>({&x, &w})) {
    auto xi = x.impl, wi = w.impl, oi = out.impl;
    bool nx = detail::grad_path(x), nw = detail::grad_path(w);
    TapeT<T>::current()->record({xi, wi}, oi, [=]() {
      const T* dy = oi->grad.data();
      if (nx) {
        xi->ensure_grad();
        T* dx = xi->grad.data();
        const T* pw = wi->values.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t c = 0; c < C; ++c) {
            T* dxp = dx + (n * C + c) * H * W;
            const T* dyp = dy + (n * C + c) * OH * OW;
            for (int64_t kh = 0; kh < K; ++kh) {
              for (int64_t kw = 0; kw < K; ++kw) {
                const T wv = pw[(c * K + kh) * K + kw];
                int64_t oh_lo, oh_hi, ow_lo, ow_hi;
                detail::tap_range(OH, H, kh, s, p, oh_lo, oh_hi);
                detail::tap_range(OW, W, kw, s, p, ow_lo, ow_hi);
                for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                  const int64_t xbase = (oh * s + kh - p) * W + kw - p;
                  const T* dyrow = dyp + oh * OW;
                  for (int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                    dxp[xbase + ow * s] += wv * dyrow[ow];
                }
              }
            }
          }
        }
      }
      if (nw) {
        wi->ensure_grad();
        T* dw = wi->grad.data();
        const T* px = xi->values.data();
#pragma omp parallel for schedule(static)
        for (int64_t c = 0; c < C; ++c) {
          for (int64_t kh = 0; kh < K; ++kh) {
            for (int64_t kw = 0; kw < K; ++kw) {
              int64_t oh_lo, oh_hi, ow_lo, ow_hi;
              detail::tap_range(OH, H, kh, s, p, oh_lo, oh_hi);
              detail::tap_range(OW, W, kw, s, p, ow_lo, ow_hi);
              T acc = T(0);
              for (int64_t n = 0; n < N; ++n) {
                const T* xp = px + (n * C + c) * H * W;
                const T* dyp = dy + (n * C + c) * OH * OW;
                for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                  const int64_t xbase = (oh * s + kh - p) * W + kw - p;
                  const T* dyrow = dyp + oh * OW;
                  for (int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                    acc += dyrow[ow] * xp[xbase + ow * s];
                }
              }
              dw[(c * K + kh) * K + kw] += acc;
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization

// Batch statistics over N*H*W per channel (population variance). Training
// mode updates running stats in place; eval mode never mutates state.
template <class T>
TensorT<T> batch_norm(const TensorT<T>& x, NormStateT<T>& state, bool training) {
  if (x.rank() != 4) throw std::invalid_argument("batch_norm: expects NCHW");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (state.channels() != C) throw std::invalid_argument("batch_norm: channel mismatch");
  const int64_t M = N * H * W;
  if (M < 1) throw std::invalid_argument("batch_norm: empty batch");
  const int64_t plane = H * W;

  std::vector<T> mean(C), invstd(C);
  if (training) {
    std::vector<T> var(C);
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
      T m = T(0);
      for (int64_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) m += p[i];
      }
      m /= T(M);
      T v = T(0);
      for (int64_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const T d = p[i] - m;
          v += d * d;
        }
      }
      v /= T(M);
      mean[c] = m;
      var[c] = v;
      invstd[c] = T(1) / std::sqrt(v + T(kNormEps));
    }
    const T mom = state.momentum;
    for (int64_t c = 0; c < C; ++c) {
      state.running_mean[c] = (T(1) - mom) * state.running_mean[c] + mom * mean[c];
      state.running_var[c] = (T(1) - mom) * state.running_var[c] + mom * var[c];
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      invstd[c] = T(1) / std::sqrt(state.running_var[c] + T(kNormEps));
    }
  }

  TensorT<T> out(x.shape());
  const T* gam = state.gamma.data();
  const T* bet = state.beta.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* p = x.data() + (n * C + c) * plane;
      T* q = out.data() + (n * C + c) * plane;
      const T a = gam[c] * invstd[c];
      const T b = bet[c] - a * mean[c];
      for (int64_t i = 0; i < plane; ++i) q[i] = a * p[i] + b;
    }
  }

  if (detail::taping<T>({&x, &state.gamma, &state.beta})) {
    auto xi = x.impl, gi = state.gamma.impl, bi = state.beta.impl, oi = out.impl;
    bool nx = detail::grad_path(x);
    TapeT<T>::current()->record(
        {xi, gi, bi}, oi, [xi, gi, bi, oi, mean, invstd, training, nx, N, C, plane, M]() {
          const T* dy = oi->grad.data();
          const T* px = xi->values.data();
          const T* gam = gi->values.data();
          gi->ensure_grad();
          bi->ensure_grad();
          if (nx) xi->ensure_grad();
#pragma omp parallel for schedule(static)
          for (int64_t c = 0; c < C; ++c) {
            T sum_dy = T(0), sum_dy_xhat = T(0);
            for (int64_t n = 0; n < N; ++n) {
              const T* dyp = dy + (n * C + c) * plane;
              const T* xp = px + (n * C + c) * plane;
              for (int64_t i = 0; i < plane; ++i) {
                const T xhat = (xp[i] - mean[c]) * invstd[c];
                sum_dy += dyp[i];
                sum_dy_xhat += dyp[i] * xhat;
              }
            }
            gi->grad[c] += sum_dy_xhat;
            bi->grad[c] += sum_dy;
            if (nx) {
              const T a = gam[c] * invstd[c];
              if (training) {
                const T mdy = sum_dy / T(M);
                const T mdyx = sum_dy_xhat / T(M);
                for (int64_t n = 0; n < N; ++n) {
                  const T* dyp = dy + (n * C + c) * plane;
                  const T* xp = px + (n * C + c) * plane;
                  T* dxp = xi->grad.data() + (n * C + c) * plane;
                  for (int64_t i = 0; i < plane; ++i) {
                    const T xhat = (xp[i] - mean[c]) * invstd[c];
                    dxp[i] += a * (dyp[i] - mdy - xhat * mdyx);
                  }
                }
              } else {
                for (int64_t n = 0; n < N; ++n) {
                  const T* dyp = dy + (n * C + c) * plane;
                  T* dxp = xi->grad.data() + (n * C + c) * plane;
                  for (int64_t i = 0; i < plane; ++i) dxp[i] += a * dyp[i];
                }
              }
            }
          }
        });
  }
  return out;
}

// Per-sample, per-channel normalization over H*W; no learnable affine.
template <class T>
TensorT<T> instance_norm(const TensorT<T>& x) {
  if (x.rank() != 4) throw std::invalid_argument("instance_norm: expects NCHW");
  const int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  const int64_t maps = N * C;
  TensorT<T> out(x.shape());
  std::vector<T> mean(maps), invstd(maps);
#pragma omp parallel for schedule(static)
  for (int64_t mc = 0; mc < maps; ++mc) {
    const T* p = x.data() + mc * plane;
    T m = T(0);
    for (int64_t i = 0; i < plane; ++i) m += p[i];
    m /= T(plane);
    T v = T(0);
    for (int64_t i = 0; i < plane; ++i) {
      const T d = p[i] - m;
      v += d * d;
    }
    v /= T(plane);
    mean[mc] = m;
    invstd[mc] = T(1) / std::sqrt(v + T(kNormEps));
    T* q = out.data() + mc * plane;
    for (int64_t i = 0; i < plane; ++i) q[i] = (p[i] - m) * invstd[mc];
  }
  if (detail::taping<T>({&x})) {
    auto xi = x.impl, oi = out.impl;
    TapeT<T>::current()->record({xi}, oi, [xi, oi, mean, invstd, maps, plane]() {
      xi->ensure_grad();
      const T* dy = oi->grad.data();
      const T* px = xi->values.data();
#pragma omp parallel for schedule(static)
      for (int64_t mc = 0; mc < maps; ++mc) {
        const T* dyp = dy + mc * plane;
        const T* xp = px + mc * plane;
        T* dxp = xi->grad.data() + mc * plane;
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int64_t i = 0; i < plane; ++i) {
          const T xhat = (xp[i] - mean[mc]) * invstd[mc];
          sum_dy += dyp[i];
          sum_dy_xhat += dyp[i] * xhat;
        }
        const T mdy = sum_dy / T(plane);
        const T mdyx = sum_dy_xhat / T(plane);
        for (int64_t i = 0; i < plane; ++i) {
          const T xhat = (xp[i] - mean[mc]) * invstd[mc];
          dxp[i] += invstd[mc] * (dyp[i] - mdy - xhat * mdyx);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pooling

template <class T>
TensorT<T> avg_pool2d(const TensorT<T>& x, int kernel, int stride) {
  if (x.rank() != 4) throw std::invalid_argument("avg_pool2d: expects NCHW");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t k = kernel, s = stride;
  if (k < 1 || s < 1 || k > H || k > W) throw std::invalid_argument("avg_pool2d: bad kernel");
  const int64_t OH = (H - k) / s + 1, OW = (W - k) / s + 1;
  TensorT<T> out({N, C, OH, OW});
  const T inv = T(1) / T(k * k);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* p = x.data() + (n * C + c) * H * W;
      T* q = out.data() + (n * C + c) * OH * OW;
      for (int64_t oh = 0; oh < OH; ++oh) {
        for (int64_t ow = 0; ow < OW; ++ow) {
          T acc = T(0);
          for (int64_t i = 0; i < k; ++i)
            for (int64_t j = 0; j < k; ++j) acc += p[(oh * s + i) * W + ow * s + j];
          q[oh * OW + ow] = acc * inv;
        }
      }
    }
  }
  if (detail::taping<T>({&x})) {
    auto xi = x.impl, oi = out.impl;
    TapeT<T>::current()->record({xi}, oi, [xi, oi, N, C, H, W, OH, OW, k, s, inv]() {
      xi->ensure_grad();
      const T* dy = oi->grad.data();
#pragma omp parallel for collapse(2) schedule(static)
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
          T* dxp = xi->grad.data() + (n * C + c) * H * W;
          const T* dyp = dy + (n * C + c) * OH * OW;
          for (int64_t oh = 0; oh < OH; ++oh)
            for (int64_t ow = 0; ow < OW; ++ow) {
              const T g = dyp[oh * OW + ow] * inv;
              for (int64_t i = 0; i < k; ++i)
                for (int64_t j = 0; j < k; ++j) dxp[(oh * s + i) * W + ow * s + j] += g;
            }
        }
      }
    });
  }
  return out;
}

// NCHW -> NC (mean over the spatial plane).
template <class T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  if (x.rank() != 4) throw std::invalid_argument("global_avg_pool: expects NCHW");
  const int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  TensorT<T> out({N, C});
  const T inv = T(1) / T(plane);
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* p = x.data() + nc * plane;
    T acc = T(0);
    for (int64_t i = 0; i < plane; ++i) acc += p[i];
    out.data()[nc] = acc * inv;
  }
  if (detail::taping<T>({&x})) {
    auto xi = x.impl, oi = out.impl;
    TapeT<T>::current()->record({xi}, oi, [xi, oi, N, C, plane, inv]() {
      xi->ensure_grad();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const T g = oi->grad[nc] * inv;
        T* dxp = xi->grad.data() + nc * plane;
        for (int64_t i = 0; i < plane; ++i) dxp[i] += g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear head

// x: N x D, w: O x D, b: O. The classifier head is the only layer with a bias.
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
    throw std::invalid_argument("linear: bad ranks");
  const int64_t N = x.dim(0), D = x.dim(1), O = w.dim(0);
  if (w.dim(1) != D || b.dim(0) != O) throw std::invalid_argument("linear: shape mismatch");
  TensorT<T> out({N, O});
  for (int64_t n = 0; n < N; ++n) {
    const T* xp = x.data() + n * D;
    T* q = out.data() + n * O;
    for (int64_t o = 0; o < O; ++o) {
      const T* wp = w.data() + o * D;
      T acc = b.data()[o];
      for (int64_t d = 0; d < D; ++d) acc += xp[d] * wp[d];
      q[o] = acc;
    }
  }
  if (detail::taping<T>({&x, &w, &b})) {
    auto xi = x.impl, wi = w.impl, bi = b.impl, oi = out.impl;
    bool nx = detail::grad_path(x);
    TapeT<T>::current()->record({xi, wi, bi}, oi, [xi, wi, bi, oi, nx, N, D, O]() {
      const T* dy = oi->grad.data();
      wi->ensure_grad();
      bi->ensure_grad();
      if (nx) xi->ensure_grad();
      for (int64_t n = 0; n < N; ++n) {
        const T* dyp = dy + n * O;
        const T* xp = xi->values.data() + n * D;
        for (int64_t o = 0; o < O; ++o) {
          const T g = dyp[o];
          bi->grad[o] += g;
          T* dwp = wi->grad.data() + o * D;
          for (int64_t d = 0; d < D; ++d) dwp[d] += g * xp[d];
        }
        if (nx) {
          T* dxp = xi->grad.data() + n * D;
          for (int64_t o = 0; o < O; ++o) {
            const T g = dyp[o];
            const T* wp = wi->values.data() + o * D;
            for (int64_t d = 0; d < D; ++d) dxp[d] += g * wp[d];
          }
        }
      }
    });
  }
  return out;
}

// Per-channel bias broadcast over N, H, W. Used by the residual adapter's
// channel-reducing 1x1 convolution, which has no following norm layer.
template <class T>
TensorT<T> bias_channels(const TensorT<T>& x, const TensorT<T>& b) {
  if (x.rank() != 4 || b.rank() != 1) throw std::invalid_argument("bias_channels: bad ranks");
  const int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (b.dim(0) != C) throw std::invalid_argument("bias_channels: channel mismatch");
  TensorT<T> out(x.shape());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* p = x.data() + (n * C + c) * plane;
      T* q = out.data() + (n * C + c) * plane;
      const T bv = b.data()[c];
      for (int64_t i = 0; i < plane; ++i) q[i] = p[i] + bv;
    }
  if (detail::taping<T>({&x, &b})) {
    auto xi = x.impl, bi = b.impl, oi = out.impl;
    bool nx = detail::grad_path(x);
    TapeT<T>::current()->record({xi, bi}, oi, [xi, bi, oi, nx, N, C, plane]() {
      const T* dy = oi->grad.data();
      bi->ensure_grad();
      if (nx) xi->ensure_grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const T* dyp = dy + (n * C + c) * plane;
          T acc = T(0);
          for (int64_t i = 0; i < plane; ++i) acc += dyp[i];
          bi->grad[c] += acc;
          if (nx) {
            T* dxp = xi->grad.data() + (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) dxp[i] += dyp[i];
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// channel plumbing

// Appends `extra` all-zero feature maps.
template <class T>
TensorT<T> pad_channels(const TensorT<T>& x, int64_t extra) {
  if (x.rank() != 4) throw std::invalid_argument("pad_channels: expects NCHW");
  if (extra < 0) throw std::invalid_argument("pad_channels: negative pad");
  if (extra == 0) return x;
  const int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  TensorT<T> out({N, C + extra, x.dim(2), x.dim(3)});
  for (int64_t n = 0; n < N; ++n)
    std::copy_n(x.data() + n * C * plane, C * plane, out.data() + n * (C + extra) * plane);
  if (detail::taping<T>({&x})) {
    auto xi = x.impl, oi = out.impl;
    TapeT<T>::current()->record({xi}, oi, [xi, oi, N, C, extra, plane]() {
      xi->ensure_grad();
      for (int64_t n = 0; n < N; ++n) {
        const T* dyp = oi->grad.data() + n * (C + extra) * plane;
        T* dxp = xi->grad.data() + n * C * plane;
        for (int64_t i = 0; i < C * plane; ++i) dxp[i] += dyp[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 4 || b.rank() != 4) throw std::invalid_argument("concat_channels: expects NCHW");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: shape mismatch");
  const int64_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  TensorT<T> out({N, Ca + Cb, a.dim(2), a.dim(3)});
  for (int64_t n = 0; n < N; ++n) {
    std::copy_n(a.data() + n * Ca * plane, Ca * plane, out.data() + n * (Ca + Cb) * plane);
    std::copy_n(b.data() + n * Cb * plane, Cb * plane,
                out.data() + (n * (Ca + Cb) + Ca) * plane);
  }
  if (detail::taping<T>({&a, &b})) {
    auto ai = a.impl, bi = b.impl, oi = out.impl;
    bool na = detail::grad_path(a), nb = detail::grad_path(b);
    TapeT<T>::current()->record({ai, bi}, oi, [ai, bi, oi, na, nb, N, Ca, Cb, plane]() {
      if (na) ai->ensure_grad();
      if (nb) bi->ensure_grad();
      for (int64_t n = 0; n < N; ++n) {
        const T* dyp = oi->grad.data() + n * (Ca + Cb) * plane;
        if (na) {
          T* dap = ai->grad.data() + n * Ca * plane;
          for (int64_t i = 0; i < Ca * plane; ++i) dap[i] += dyp[i];
        }
        if (nb) {
          T* dbp = bi->grad.data() + n * Cb * plane;
          for (int64_t i = 0; i < Cb * plane; ++i) dbp[i] += dyp[Ca * plane + i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// loss

// Mean cross-entropy over the batch, log-sum-exp stable.
template <class T>
TensorT<T> softmax_cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: expects N x C");
  const int64_t N = logits.dim(0), C = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= C) throw std::invalid_argument("softmax_cross_entropy: label out of range");

  std::vector<T> probs(static_cast<size_t>(N * C));
  T loss = T(0);
  for (int64_t n = 0; n < N; ++n) {
    const T* z = logits.data() + n * C;
    T m = z[0];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, z[c]);
    T s = T(0);
    for (int64_t c = 0; c < C; ++c) s += std::exp(z[c] - m);
    const T lse = m + std::log(s);
    for (int64_t c = 0; c < C; ++c) probs[n * C + c] = std::exp(z[c] - lse);
    loss += lse - z[labels[n]];
  }
  loss /= T(N);
  TensorT<T> out = TensorT<T>::from_values({1}, {loss});
  if (detail::taping<T>({&logits})) {
    auto li = logits.impl, oi = out.impl;
    TapeT<T>::current()->record({li}, oi, [li, oi, probs = std::move(probs), labels, N, C]() {
      li->ensure_grad();
      const T g = oi->grad[0] / T(N);
      for (int64_t n = 0; n < N; ++n) {
        T* dz = li->grad.data() + n * C;
        const T* p = probs.data() + n * C;
        for (int64_t c = 0; c < C; ++c) dz[c] += g * p[c];
        dz[labels[n]] -= g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// non-differentiable helpers

// Ties resolve to the lowest index.
template <class T>
std::vector<int> argmax_rows(const TensorT<T>& logits) {
  const int64_t N = logits.dim(0), C = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(N));
  for (int64_t n = 0; n < N; ++n) {
    const T* z = logits.data() + n * C;
    int best = 0;
    for (int64_t c = 1; c < C; ++c)
      if (z[c] > z[best]) best = static_cast<int>(c);
    out[n] = best;
  }
  return out;
}

template <class T>
void check_finite(const TensorT<T>& t, const std::string& what) {
  for (const T v : t.values())
    if (!std::isfinite(static_cast<double>(v)))
      throw std::runtime_error("non-finite value in " + what);
}

}  // namespace minnet
