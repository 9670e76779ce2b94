// Copyright 2026 The coher-pvad Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "coher_pvad/autodiff.hpp"
#include "coher_pvad/error.hpp"

// Differentiable operations used by the detector.  Convolutional tensors are
// laid out (channel, frame, frequency); sequence tensors are (frame, feature).

namespace coher_pvad::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

namespace detail {
template <typename T>
void check_shape(const Var<T>& v, const Shape& expected, const char* what) {
  if (v->value.dims != expected) {
    throw Error(std::string(what) + ": expected shape " + shape_string(expected) + ", got " +
                shape_string(v->value.dims));
  }
}

template <typename T>
bool live(const Var<T>& out) {
  return !out->grad.empty();
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace detail

/// Elementwise product.
template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require(a->value.dims == b->value.dims, "mul: shape mismatch");
  Tensor<T> y(a->value.dims);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = a->value.data[i] * b->value.data[i];
  auto out = tape.output(std::move(y), {&a, &b});
  if (out->requires_grad) {
    tape.record([a, b, out] {
      if (!detail::live(out)) return;
      const T* g = out->grad.data();
      if (a->requires_grad) {
        T* ga = a->grad_ptr();
        for (std::size_t i = 0; i < out->value.size(); ++i) ga[i] += g[i] * b->value.data[i];
      }
      if (b->requires_grad) {
        T* gb = b->grad_ptr();
        for (std::size_t i = 0; i < out->value.size(); ++i) gb[i] += g[i] * a->value.data[i];
      }
    });
  }
  return out;
}

/// sum_i c_i x_i for a constant coefficient vector; a scalar node.
template <typename T>
Var<T> weighted_sum(Tape<T>& tape, const Var<T>& x, std::vector<T> coeffs) {
  require(coeffs.size() == x->value.size(), "weighted_sum: coefficient count mismatch");
  T acc = T(0);
  for (std::size_t i = 0; i < coeffs.size(); ++i) acc += coeffs[i] * x->value.data[i];
  auto out = tape.output(Tensor<T>({1}, std::vector<T>{acc}), {&x});
  if (out->requires_grad) {
    tape.record([x, out, c = std::move(coeffs)] {
      if (!detail::live(out)) return;
      const T g = out->grad[0];
      T* gx = x->grad_ptr();
      for (std::size_t i = 0; i < c.size(); ++i) gx[i] += g * c[i];
    });
  }
  return out;
}

template <typename T>
Var<T> sum(Tape<T>& tape, const Var<T>& x) {
  return weighted_sum(tape, x, std::vector<T>(x->value.size(), T(1)));
}

/// Per-channel 2-D convolution over (frequency, time).
///
/// Weight shape (C, kf, kt).  Frequency uses stride `stride_f` with
/// symmetric zero padding `pad_f`; time uses stride 1 with kt-1 zero frames
/// in front, so the output keeps one frame per input frame.
template <typename T>
Var<T> depthwise_conv(Tape<T>& tape, const Var<T>& x, const Var<T>& w, const Var<T>& b,
                      std::size_t stride_f, std::size_t pad_f) {
  require(x->value.dims.size() == 3, "depthwise_conv: input must be (C, L, F)");
  const std::size_t C = x->value.dim(0), L = x->value.dim(1), F = x->value.dim(2);
  require(w->value.dims.size() == 3 && w->value.dim(0) == C, "depthwise_conv: weight must be (C, kf, kt)");
  detail::check_shape(b, {C}, "depthwise_conv bias");
  const std::size_t kf = w->value.dim(1), kt = w->value.dim(2);
  require(stride_f >= 1 && F + 2 * pad_f >= kf, "depthwise_conv: frequency axis too short");
  const std::size_t Fo = (F + 2 * pad_f - kf) / stride_f + 1;
  const long tpad = static_cast<long>(kt) - 1;

  Tensor<T> y({C, L, Fo});
  const T* xv = x->value.ptr();
  const T* wv = w->value.ptr();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t fo = 0; fo < Fo; ++fo) {
        T acc = b->value.data[c];
        for (std::size_t j = 0; j < kt; ++j) {
          const long t = static_cast<long>(l) + static_cast<long>(j) - tpad;
          if (t < 0) continue;
          for (std::size_t i = 0; i < kf; ++i) {
            const long f = static_cast<long>(fo * stride_f + i) - static_cast<long>(pad_f);
            if (f < 0 || f >= static_cast<long>(F)) continue;
            acc += wv[(c * kf + i) * kt + j] * xv[(c * L + static_cast<std::size_t>(t)) * F + static_cast<std::size_t>(f)];
          }
        }
        y.data[(c * L + l) * Fo + fo] = acc;
      }
    }
  }
  auto out = tape.output(std::move(y), {&x, &w, &b});
  if (out->requires_grad) {
    tape.record([=] {
      if (!detail::live(out)) return;
      const T* g = out->grad.data();
      T* gx = x->requires_grad ? x->grad_ptr() : nullptr;
      T* gw = w->requires_grad ? w->grad_ptr() : nullptr;
      T* gb = b->requires_grad ? b->grad_ptr() : nullptr;
      const T* xv = x->value.ptr();
      const T* wv = w->value.ptr();
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t l = 0; l < L; ++l) {
          for (std::size_t fo = 0; fo < Fo; ++fo) {
            const T go = g[(c * L + l) * Fo + fo];
            if (gb) gb[c] += go;
            for (std::size_t j = 0; j < kt; ++j) {
              const long t = static_cast<long>(l) + static_cast<long>(j) - tpad;
              if (t < 0) continue;
              for (std::size_t i = 0; i < kf; ++i) {
                const long f = static_cast<long>(fo * stride_f + i) - static_cast<long>(pad_f);
                if (f < 0 || f >= static_cast<long>(F)) continue;
                const std::size_t xi = (c * L + static_cast<std::size_t>(t)) * F + static_cast<std::size_t>(f);
                const std::size_t wi = (c * kf + i) * kt + j;
                if (gw) gw[wi] += go * xv[xi];
                if (gx) gx[xi] += go * wv[wi];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// 1x1 convolution mixing channels: y[o] = b[o] + sum_i w[o, i] x[i].
template <typename T>
Var<T> pointwise_conv(Tape<T>& tape, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require(x->value.dims.size() == 3, "pointwise_conv: input must be (C, L, F)");
  const std::size_t Ci = x->value.dim(0), L = x->value.dim(1), F = x->value.dim(2);
  require(w->value.dims.size() == 2 && w->value.dim(1) == Ci, "pointwise_conv: weight must be (Cout, Cin)");
  const std::size_t Co = w->value.dim(0);
  detail::check_shape(b, {Co}, "pointwise_conv bias");
  const std::size_t N = L * F;

  Tensor<T> y({Co, L, F});
  {
    MapMat<T> Y(y.ptr(), Co, N);
    ConstMapMat<T> W(w->value.ptr(), Co, Ci);
    ConstMapMat<T> X(x->value.ptr(), Ci, N);
    Y.noalias() = W * X;
    Y.colwise() += ConstMapVec<T>(b->value.ptr(), Co);
  }
  auto out = tape.output(std::move(y), {&x, &w, &b});
  if (out->requires_grad) {
    tape.record([=] {
      if (!detail::live(out)) return;
      ConstMapMat<T> G(out->grad.data(), Co, N);
      if (w->requires_grad) {
        MapMat<T>(w->grad_ptr(), Co, Ci).noalias() += G * ConstMapMat<T>(x->value.ptr(), Ci, N).transpose();
      }
      if (b->requires_grad) MapVec<T>(b->grad_ptr(), Co) += G.rowwise().sum();
      if (x->requires_grad) {
        MapMat<T>(x->grad_ptr(), Ci, N).noalias() += ConstMapMat<T>(w->value.ptr(), Co, Ci).transpose() * G;
      }
    });
  }
  return out;
}

/// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;
};

/// Per-channel normalization over (frame, frequency).  Training mode uses
/// the statistics of `x` and folds them into `stats` with `momentum`;
/// evaluation mode normalizes with `stats`.
template <typename T>
Var<T> batch_norm(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormStats<T>* stats, bool training, T momentum = T(0.99), T eps = T(1e-5)) {
  require(x->value.dims.size() == 3, "batch_norm: input must be (C, L, F)");
  const std::size_t C = x->value.dim(0), N = x->value.dim(1) * x->value.dim(2);
  detail::check_shape(gamma, {C}, "batch_norm scale");
  detail::check_shape(beta, {C}, "batch_norm shift");
  require(stats == nullptr || (stats->mean.size() == C && stats->var.size() == C),
          "batch_norm: running statistics size mismatch");
  require(training || stats != nullptr, "batch_norm: evaluation requires running statistics");

  std::vector<T> mean(C), inv_std(C);
  const T* xv = x->value.ptr();
  for (std::size_t c = 0; c < C; ++c) {
    if (training) {
      T m = T(0);
      for (std::size_t n = 0; n < N; ++n) m += xv[c * N + n];
      m /= static_cast<T>(N);
      T v = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        const T d = xv[c * N + n] - m;
        v += d * d;
      }
      v /= static_cast<T>(N);
      mean[c] = m;
      inv_std[c] = T(1) / std::sqrt(v + eps);
      if (stats) {
        const T unbiased = N > 1 ? v * static_cast<T>(N) / static_cast<T>(N - 1) : v;
        stats->mean[c] = momentum * stats->mean[c] + (T(1) - momentum) * m;
        stats->var[c] = momentum * stats->var[c] + (T(1) - momentum) * unbiased;
      }
    } else {
      mean[c] = stats->mean[c];
      inv_std[c] = T(1) / std::sqrt(stats->var[c] + eps);
    }
  }
  Tensor<T> xhat(x->value.dims), y(x->value.dims);
  for (std::size_t c = 0; c < C; ++c) {
    const T gc = gamma->value.data[c], bc = beta->value.data[c];
    for (std::size_t n = 0; n < N; ++n) {
      const T h = (xv[c * N + n] - mean[c]) * inv_std[c];
      xhat.data[c * N + n] = h;
      y.data[c * N + n] = gc * h + bc;
    }
  }
  auto out = tape.output(std::move(y), {&x, &gamma, &beta});
  if (out->requires_grad) {
    tape.record([=, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      if (!detail::live(out)) return;
      const T* g = out->grad.data();
      for (std::size_t c = 0; c < C; ++c) {
        T sum_g = T(0), sum_gx = T(0);
        for (std::size_t n = 0; n < N; ++n) {
          sum_g += g[c * N + n];
          sum_gx += g[c * N + n] * xhat.data[c * N + n];
        }
        if (gamma->requires_grad) gamma->grad_ptr()[c] += sum_gx;
        if (beta->requires_grad) beta->grad_ptr()[c] += sum_g;
        if (!x->requires_grad) continue;
        T* gx = x->grad_ptr();
        const T gc = gamma->value.data[c];
        if (training) {
          const T inv_n = T(1) / static_cast<T>(N);
          for (std::size_t n = 0; n < N; ++n) {
            gx[c * N + n] += gc * inv_std[c] *
                             (g[c * N + n] - inv_n * sum_g - xhat.data[c * N + n] * inv_n * sum_gx);
          }
        } else {
          for (std::size_t n = 0; n < N; ++n) gx[c * N + n] += gc * inv_std[c] * g[c * N + n];
        }
      }
    });
  }
  return out;
}

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> y(x->value.dims);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = std::max(x->value.data[i], T(0));
  auto out = tape.output(std::move(y), {&x});
  if (out->requires_grad) {
    tape.record([x, out] {
      if (!detail::live(out)) return;
      T* gx = x->grad_ptr();
      for (std::size_t i = 0; i < out->value.size(); ++i) {
        if (x->value.data[i] > T(0)) gx[i] += out->grad[i];
      }
    });
  }
  return out;
}

/// (C, L, F) -> (L, C*F), feature index c*F + f.
template <typename T>
Var<T> flatten_frames(Tape<T>& tape, const Var<T>& x) {
  require(x->value.dims.size() == 3, "flatten_frames: input must be (C, L, F)");
  const std::size_t C = x->value.dim(0), L = x->value.dim(1), F = x->value.dim(2);
  Tensor<T> y({L, C * F});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t f = 0; f < F; ++f) y.data[l * C * F + c * F + f] = x->value.data[(c * L + l) * F + f];
  auto out = tape.output(std::move(y), {&x});
  if (out->requires_grad) {
    tape.record([=] {
      if (!detail::live(out)) return;
      T* gx = x->grad_ptr();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t l = 0; l < L; ++l)
          for (std::size_t f = 0; f < F; ++f) gx[(c * L + l) * F + f] += out->grad[l * C * F + c * F + f];
    });
  }
  return out;
}

/// Gated recurrent unit over a (L, I) sequence from a zero initial state.
///
/// Gate blocks in the stacked weights are ordered reset, update, candidate:
///   r = sig(Wr x + br + Ur h + cr)
///   z = sig(Wz x + bz + Uz h + cz)
///   n = tanh(Wn x + bn + r * (Un h + cn))
///   h' = (1 - z) * n + z * h
template <typename T>
Var<T> gru(Tape<T>& tape, const Var<T>& x, const Var<T>& w_ih, const Var<T>& w_hh,
           const Var<T>& b_ih, const Var<T>& b_hh) {
  require(x->value.dims.size() == 2, "gru: input must be (L, I)");
  const std::size_t L = x->value.dim(0), I = x->value.dim(1);
  require(w_hh->value.dims.size() == 2 && w_hh->value.dim(0) % 3 == 0, "gru: recurrent weight must be (3H, H)");
  const std::size_t H = w_hh->value.dim(1);
  detail::check_shape(w_hh, {3 * H, H}, "gru recurrent weight");
  detail::check_shape(w_ih, {3 * H, I}, "gru input weight");
  detail::check_shape(b_ih, {3 * H}, "gru input bias");
  detail::check_shape(b_hh, {3 * H}, "gru recurrent bias");

  // Input projections for every frame at once.
  RowMat<T> gi = ConstMapMat<T>(x->value.ptr(), L, I) * ConstMapMat<T>(w_ih->value.ptr(), 3 * H, I).transpose();
  gi.rowwise() += ConstMapVec<T>(b_ih->value.ptr(), 3 * H).transpose();

  ConstMapMat<T> Whh(w_hh->value.ptr(), 3 * H, H);
  ConstMapVec<T> bhh(b_hh->value.ptr(), 3 * H);
  // Saved per frame: r, z, n and the recurrent candidate term Un h + cn.
  RowMat<T> r(L, H), z(L, H), n(L, H), ghn(L, H);
  Tensor<T> y({L, H});
  MapMat<T> Y(y.ptr(), L, H);
  Eigen::Matrix<T, Eigen::Dynamic, 1> h = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(H);
  Eigen::Matrix<T, Eigen::Dynamic, 1> gh(3 * H);
  for (std::size_t t = 0; t < L; ++t) {
    gh.noalias() = Whh * h;
    gh += bhh;
    for (std::size_t k = 0; k < H; ++k) {
      const T rk = detail::sigmoid(gi(t, k) + gh(k));
      const T zk = detail::sigmoid(gi(t, H + k) + gh(H + k));
      const T nk = std::tanh(gi(t, 2 * H + k) + rk * gh(2 * H + k));
      r(t, k) = rk;
      z(t, k) = zk;
      n(t, k) = nk;
      ghn(t, k) = gh(2 * H + k);
      h(k) = (T(1) - zk) * nk + zk * h(k);
    }
    Y.row(t) = h.transpose();
  }
  auto out = tape.output(std::move(y), {&x, &w_ih, &w_hh, &b_ih, &b_hh});
  if (out->requires_grad) {
    tape.record([=, r = std::move(r), z = std::move(z), n = std::move(n), ghn = std::move(ghn)] {
      if (!detail::live(out)) return;
      ConstMapMat<T> G(out->grad.data(), L, H);
      ConstMapMat<T> Yv(out->value.ptr(), L, H);
      ConstMapMat<T> Whh(w_hh->value.ptr(), 3 * H, H);
      RowMat<T> dgi(L, 3 * H), dgh(L, 3 * H);
      Eigen::Matrix<T, Eigen::Dynamic, 1> dh = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(H);
      Eigen::Matrix<T, Eigen::Dynamic, 1> dh_prev(H);
      for (std::size_t tt = L; tt-- > 0;) {
        dh += G.row(tt).transpose();
        for (std::size_t k = 0; k < H; ++k) {
          const T hp = tt > 0 ? Yv(tt - 1, k) : T(0);
          const T rk = r(tt, k), zk = z(tt, k), nk = n(tt, k);
          const T dn = dh(k) * (T(1) - zk);
          const T dz = dh(k) * (hp - nk);
          const T dan = dn * (T(1) - nk * nk);
          const T dr = dan * ghn(tt, k);
          const T dar = dr * rk * (T(1) - rk);
          const T daz = dz * zk * (T(1) - zk);
          dgi(tt, k) = dar;
          dgi(tt, H + k) = daz;
          dgi(tt, 2 * H + k) = dan;
          dgh(tt, k) = dar;
          dgh(tt, H + k) = daz;
          dgh(tt, 2 * H + k) = dan * rk;
          dh_prev(k) = dh(k) * zk;
        }
        dh_prev.noalias() += Whh.transpose() * dgh.row(tt).transpose();
        dh = dh_prev;
      }
      if (w_ih->requires_grad) {
        MapMat<T>(w_ih->grad_ptr(), 3 * H, I).noalias() += dgi.transpose() * ConstMapMat<T>(x->value.ptr(), L, I);
      }
      if (b_ih->requires_grad) MapVec<T>(b_ih->grad_ptr(), 3 * H) += dgi.colwise().sum().transpose();
      if (b_hh->requires_grad) MapVec<T>(b_hh->grad_ptr(), 3 * H) += dgh.colwise().sum().transpose();
      if (w_hh->requires_grad && L > 1) {
        MapMat<T>(w_hh->grad_ptr(), 3 * H, H).noalias() +=
            dgh.bottomRows(L - 1).transpose() * Yv.topRows(L - 1);
      }
      if (x->requires_grad) {
        MapMat<T>(x->grad_ptr(), L, I).noalias() += dgi * ConstMapMat<T>(w_ih->value.ptr(), 3 * H, I);
      }
    });
  }
  return out;
}

/// Feature-wise affine modulation of (L, H) by a conditioning vector e:
///   out = (Wg e + bg) * h + (Wb e + bb)
template <typename T>
Var<T> film(Tape<T>& tape, const Var<T>& h, const Var<T>& e, const Var<T>& wg, const Var<T>& bg,
            const Var<T>& wb, const Var<T>& bb) {
  require(h->value.dims.size() == 2, "film: input must be (L, H)");
  const std::size_t L = h->value.dim(0), H = h->value.dim(1);
  require(e->value.dims.size() == 1, "film: conditioning must be a vector");
  const std::size_t D = e->value.dim(0);
  detail::check_shape(wg, {H, D}, "film scale weight");
  detail::check_shape(wb, {H, D}, "film shift weight");
  detail::check_shape(bg, {H}, "film scale bias");
  detail::check_shape(bb, {H}, "film shift bias");

  ConstMapVec<T> ev(e->value.ptr(), D);
  Eigen::Matrix<T, Eigen::Dynamic, 1> scale = ConstMapMat<T>(wg->value.ptr(), H, D) * ev;
  scale += ConstMapVec<T>(bg->value.ptr(), H);
  Eigen::Matrix<T, Eigen::Dynamic, 1> shift = ConstMapMat<T>(wb->value.ptr(), H, D) * ev;
  shift += ConstMapVec<T>(bb->value.ptr(), H);
  Tensor<T> y({L, H});
  MapMat<T> Y(y.ptr(), L, H);
  Y.noalias() = ConstMapMat<T>(h->value.ptr(), L, H) * scale.asDiagonal();
  Y.rowwise() += shift.transpose();
  auto out = tape.output(std::move(y), {&h, &e, &wg, &bg, &wb, &bb});
  if (out->requires_grad) {
    tape.record([=, scale = std::move(scale)] {
      if (!detail::live(out)) return;
      ConstMapMat<T> G(out->grad.data(), L, H);
      ConstMapMat<T> Hv(h->value.ptr(), L, H);
      const Eigen::Matrix<T, Eigen::Dynamic, 1> dscale = (G.array() * Hv.array()).colwise().sum().transpose();
      const Eigen::Matrix<T, Eigen::Dynamic, 1> dshift = G.colwise().sum().transpose();
      ConstMapVec<T> ev(e->value.ptr(), D);
      if (h->requires_grad) MapMat<T>(h->grad_ptr(), L, H).noalias() += G * scale.asDiagonal();
      if (wg->requires_grad) MapMat<T>(wg->grad_ptr(), H, D).noalias() += dscale * ev.transpose();
      if (bg->requires_grad) MapVec<T>(bg->grad_ptr(), H) += dscale;
      if (wb->requires_grad) MapMat<T>(wb->grad_ptr(), H, D).noalias() += dshift * ev.transpose();
      if (bb->requires_grad) MapVec<T>(bb->grad_ptr(), H) += dshift;
      if (e->requires_grad) {
        MapVec<T>(e->grad_ptr(), D).noalias() +=
            ConstMapMat<T>(wg->value.ptr(), H, D).transpose() * dscale +
            ConstMapMat<T>(wb->value.ptr(), H, D).transpose() * dshift;
      }
    });
  }
  return out;
}

/// Fully connected layer applied per frame: (L, I) -> (L, O).
template <typename T>
Var<T> dense(Tape<T>& tape, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require(x->value.dims.size() == 2, "dense: input must be (L, I)");
  const std::size_t L = x->value.dim(0), I = x->value.dim(1);
  require(w->value.dims.size() == 2 && w->value.dim(1) == I, "dense: weight must be (O, I)");
  const std::size_t O = w->value.dim(0);
  detail::check_shape(b, {O}, "dense bias");
  Tensor<T> y({L, O});
  MapMat<T> Y(y.ptr(), L, O);
  Y.noalias() = ConstMapMat<T>(x->value.ptr(), L, I) * ConstMapMat<T>(w->value.ptr(), O, I).transpose();
  Y.rowwise() += ConstMapVec<T>(b->value.ptr(), O).transpose();
  auto out = tape.output(std::move(y), {&x, &w, &b});
  if (out->requires_grad) {
    tape.record([=] {
      if (!detail::live(out)) return;
      ConstMapMat<T> G(out->grad.data(), L, O);
      if (w->requires_grad) {
        MapMat<T>(w->grad_ptr(), O, I).noalias() += G.transpose() * ConstMapMat<T>(x->value.ptr(), L, I);
      }
      if (b->requires_grad) MapVec<T>(b->grad_ptr(), O) += G.colwise().sum().transpose();
      if (x->requires_grad) {
        MapMat<T>(x->grad_ptr(), L, I).noalias() += G * ConstMapMat<T>(w->value.ptr(), O, I);
      }
    });
  }
  return out;
}

template <typename T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> y(x->value.dims);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = detail::sigmoid(x->value.data[i]);
  auto out = tape.output(std::move(y), {&x});
  if (out->requires_grad) {
    tape.record([x, out] {
      if (!detail::live(out)) return;
      T* gx = x->grad_ptr();
      for (std::size_t i = 0; i < out->value.size(); ++i) {
        const T s = out->value.data[i];
        gx[i] += out->grad[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

inline constexpr double kProbClamp = 1e-7;

/// Frame-averaged binary cross-entropy on logits, with probabilities clamped
/// to [1e-7, 1 - 1e-7].  Evaluated in the log-sum-exp form so large logits
/// do not overflow.
template <typename T>
Var<T> bce_with_logits(Tape<T>& tape, const Var<T>& logits, std::span<const float> labels) {
  const std::size_t L = logits->value.size();
  require(labels.size() == L, "bce: label count does not match frame count");
  require(L > 0, "bce: empty sequence");
  const T bound = static_cast<T>(std::log((1.0 - kProbClamp) / kProbClamp));
  T acc = T(0);
  for (std::size_t i = 0; i < L; ++i) {
    const T zc = std::clamp(logits->value.data[i], -bound, bound);
    const T y = static_cast<T>(labels[i]);
    acc += std::max(zc, T(0)) - zc * y + std::log1p(std::exp(-std::abs(zc)));
  }
  auto out = tape.output(Tensor<T>({1}, std::vector<T>{acc / static_cast<T>(L)}), {&logits});
  if (out->requires_grad) {
    std::vector<T> y(labels.begin(), labels.end());
    tape.record([logits, out, y = std::move(y), bound] {
      if (!detail::live(out)) return;
      const T g = out->grad[0] / static_cast<T>(y.size());
      T* gx = logits->grad_ptr();
      for (std::size_t i = 0; i < y.size(); ++i) {
        const T z = logits->value.data[i];
        if (z < -bound || z > bound) continue;
        gx[i] += g * (detail::sigmoid(z) - y[i]);
      }
    });
  }
  return out;
}

/// Reference BCE on probabilities, same clamping rule.
inline double bce_loss(std::span<const double> probs, std::span<const float> labels) {
  require(probs.size() == labels.size(), "bce: label count does not match frame count");
  require(!probs.empty(), "bce: empty sequence");
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
    acc += -(labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p));
  }
  return acc / static_cast<double>(probs.size());
}

}  // namespace coher_pvad::nn
