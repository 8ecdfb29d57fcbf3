// Dense NN kernels: conv2d, batch norm, relu, global average pooling, linear,
// binary heads, SGD with momentum and a finite-difference gradient oracle.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "seisbench/common.hpp"
#include "seisbench/tensor.hpp"

namespace seisbench {

enum class RunMode { Train, Eval };

// View over one parameter tensor and its gradient accumulator.
template <typename T>
struct ParamRef {
  T* data = nullptr;
  T* grad = nullptr;
  std::size_t size = 0;
};

// View over non-trainable state (running normalization statistics).
template <typename T>
struct StateRef {
  T* data = nullptr;
  std::size_t size = 0;
};

namespace nn {

template <typename T>
int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
struct ConvCache {
  Tensor4<T> x;
};

template <typename T>
struct Conv2d {
  int in_c = 0, out_c = 0, k = 0, stride = 1, pad = 0;
  Tensor4<T> w;          // (out_c, in_c, k, k)
  std::vector<T> b;
  Tensor4<T> gw;
  std::vector<T> gb;

  Conv2d() = default;
  Conv2d(int in_c_, int out_c_, int k_, int stride_, int pad_)
      : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_),
        w(out_c_, in_c_, k_, k_), b(out_c_, T(0)),
        gw(out_c_, in_c_, k_, k_), gb(out_c_, T(0)) {
    if (stride_ < 1) throw ShapeError("conv2d: stride must be >= 1");
  }

  std::size_t param_count() const { return w.size() + b.size(); }

  void init(Rng& rng) {
    // Kaiming fan-in scaled gaussian; biases zero.
    double fan_in = static_cast<double>(in_c) * k * k;
    double std = std::sqrt(2.0 / fan_in);
    for (T& x : w.v) x = static_cast<T>(std * rng.gaussian());
    std::fill(b.begin(), b.end(), T(0));
  }

  void zero_grad() {
    gw.fill(T(0));
    std::fill(gb.begin(), gb.end(), T(0));
  }

  Tensor4<T> forward(const Tensor4<T>& x, ConvCache<T>* cache) const {
    if (x.c != in_c)
      throw ShapeError("conv2d: input has " + std::to_string(x.c) +
                       " channels, kernel expects " + std::to_string(in_c));
    int oh = conv_out_dim<T>(x.h, k, stride, pad);
    int ow = conv_out_dim<T>(x.w, k, stride, pad);
    if (oh < 1 || ow < 1) throw ShapeError("conv2d: output would be empty");
    Tensor4<T> y(x.n, out_c, oh, ow);
    for (int n = 0; n < x.n; ++n) {
      for (int o = 0; o < out_c; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
          T* yrow = y.row(n, o, oy);
          for (int ox = 0; ox < ow; ++ox) yrow[ox] = b[o];
        }
        for (int i = 0; i < in_c; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              T wv = w.at(o, i, ky, kx);
              if (wv == T(0)) continue;
              for (int oy = 0; oy < oh; ++oy) {
                int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= x.h) continue;
                const T* xrow = x.row(n, i, iy);
                T* yrow = y.row(n, o, oy);
                if (stride == 1) {
                  int ox0 = std::max(0, pad - kx);
                  int ox1 = std::min(ow, x.w + pad - kx);
                  const T* xp = xrow - pad + kx;
                  for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xp[ox];
                } else {
                  for (int ox = 0; ox < ow; ++ox) {
                    int ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= x.w) continue;
                    yrow[ox] += wv * xrow[ix];
                  }
                }
              }
            }
          }
        }
      }
    }
    if (cache) cache->x = x;
    return y;
  }

  // Accumulates gw/gb, returns dL/dx.
  Tensor4<T> backward(const Tensor4<T>& dy, const ConvCache<T>& cache) {
    const Tensor4<T>& x = cache.x;
    Tensor4<T> dx(x.n, x.c, x.h, x.w);
    int oh = dy.h, ow = dy.w;
    for (int n = 0; n < x.n; ++n) {
      for (int o = 0; o < out_c; ++o) {
        T gbo = T(0);
        for (int oy = 0; oy < oh; ++oy) {
          const T* drow = dy.row(n, o, oy);
          for (int ox = 0; ox < ow; ++ox) gbo += drow[ox];
        }
        gb[o] += gbo;
        for (int i = 0; i < in_c; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              T wv = w.at(o, i, ky, kx);
              T gwv = T(0);
              for (int oy = 0; oy < oh; ++oy) {
                int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= x.h) continue;
                const T* xrow = x.row(n, i, iy);
                T* dxrow = dx.row(n, i, iy);
                const T* drow = dy.row(n, o, oy);
                if (stride == 1) {
                  int ox0 = std::max(0, pad - kx);
                  int ox1 = std::min(ow, x.w + pad - kx);
                  const T* xp = xrow - pad + kx;
                  T* dxp = dxrow - pad + kx;
                  for (int ox = ox0; ox < ox1; ++ox) {
                    gwv += drow[ox] * xp[ox];
                    dxp[ox] += drow[ox] * wv;
                  }
                } else {
                  for (int ox = 0; ox < ow; ++ox) {
                    int ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= x.w) continue;
                    gwv += drow[ox] * xrow[ix];
                    dxrow[ix] += drow[ox] * wv;
                  }
                }
              }
              gw.at(o, i, ky, kx) += gwv;
            }
          }
        }
      }
    }
    return dx;
  }
};

template <typename T>
struct BNCache {
  Tensor4<T> xhat;
  std::vector<T> inv_std;
  std::size_t count_per_chan = 0;
};

// Per-channel batch normalization over (batch, h, w).
template <typename T>
struct BatchNorm {
  int channels = 0;
  T eps = T(1e-5);
  T momentum = T(0.1);
  std::vector<T> gamma, beta, ggamma, gbeta;
  std::vector<T> run_mean, run_var;

  BatchNorm() = default;
  explicit BatchNorm(int c)
      : channels(c), gamma(c, T(1)), beta(c, T(0)), ggamma(c, T(0)),
        gbeta(c, T(0)), run_mean(c, T(0)), run_var(c, T(1)) {}

  std::size_t param_count() const { return gamma.size() + beta.size(); }

  void zero_grad() {
    std::fill(ggamma.begin(), ggamma.end(), T(0));
    std::fill(gbeta.begin(), gbeta.end(), T(0));
  }

  Tensor4<T> forward(const Tensor4<T>& x, RunMode mode, BNCache<T>* cache) {
    if (x.c != channels) throw ShapeError("batchnorm: channel mismatch");
    std::size_t m = static_cast<std::size_t>(x.n) * x.h * x.w;
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    if (mode == RunMode::Train) {
      if (m < 2) throw ShapeError("batchnorm: train mode needs batch*h*w >= 2");
      if (cache) {
        cache->xhat = Tensor4<T>(x.n, x.c, x.h, x.w);
        cache->inv_std.assign(channels, T(0));
        cache->count_per_chan = m;
      }
      for (int c = 0; c < channels; ++c) {
        T mean = T(0);
        for (int n = 0; n < x.n; ++n)
          for (int ih = 0; ih < x.h; ++ih) {
            const T* r = x.row(n, c, ih);
            for (int iw = 0; iw < x.w; ++iw) mean += r[iw];
          }
        mean /= static_cast<T>(m);
        T var = T(0);
        for (int n = 0; n < x.n; ++n)
          for (int ih = 0; ih < x.h; ++ih) {
            const T* r = x.row(n, c, ih);
            for (int iw = 0; iw < x.w; ++iw) {
              T d = r[iw] - mean;
              var += d * d;
            }
          }
        var /= static_cast<T>(m);
        T inv_std = T(1) / std::sqrt(var + eps);
        for (int n = 0; n < x.n; ++n)
          for (int ih = 0; ih < x.h; ++ih) {
            const T* r = x.row(n, c, ih);
            T* yr = y.row(n, c, ih);
            T* xh = cache ? cache->xhat.row(n, c, ih) : nullptr;
            for (int iw = 0; iw < x.w; ++iw) {
              T xhat = (r[iw] - mean) * inv_std;
              if (xh) xh[iw] = xhat;
              yr[iw] = gamma[c] * xhat + beta[c];
            }
          }
        if (cache) cache->inv_std[c] = inv_std;
        run_mean[c] = (T(1) - momentum) * run_mean[c] + momentum * mean;
        run_var[c] = (T(1) - momentum) * run_var[c] + momentum * var;
      }
    } else {
      for (int c = 0; c < channels; ++c) {
        T inv_std = T(1) / std::sqrt(run_var[c] + eps);
        T scale = gamma[c] * inv_std;
        T shift = beta[c] - run_mean[c] * scale;
        for (int n = 0; n < x.n; ++n)
          for (int ih = 0; ih < x.h; ++ih) {
            const T* r = x.row(n, c, ih);
            T* yr = y.row(n, c, ih);
            for (int iw = 0; iw < x.w; ++iw) yr[iw] = scale * r[iw] + shift;
          }
      }
    }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy, const BNCache<T>& cache) {
    const Tensor4<T>& xhat = cache.xhat;
    T m = static_cast<T>(cache.count_per_chan);
    Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
    for (int c = 0; c < channels; ++c) {
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (int n = 0; n < dy.n; ++n)
        for (int ih = 0; ih < dy.h; ++ih) {
          const T* dr = dy.row(n, c, ih);
          const T* xh = xhat.row(n, c, ih);
          for (int iw = 0; iw < dy.w; ++iw) {
            sum_dy += dr[iw];
            sum_dy_xhat += dr[iw] * xh[iw];
          }
        }
      ggamma[c] += sum_dy_xhat;
      gbeta[c] += sum_dy;
      T scale = gamma[c] * cache.inv_std[c];
      for (int n = 0; n < dy.n; ++n)
        for (int ih = 0; ih < dy.h; ++ih) {
          const T* dr = dy.row(n, c, ih);
          const T* xh = xhat.row(n, c, ih);
          T* dxr = dx.row(n, c, ih);
          for (int iw = 0; iw < dy.w; ++iw)
            dxr[iw] = scale * (dr[iw] - sum_dy / m - xh[iw] * sum_dy_xhat / m);
        }
    }
    return dx;
  }
};

template <typename T>
struct ReluCache {
  Tensor4<T> y;
};

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x, ReluCache<T>* cache = nullptr) {
  Tensor4<T> y = x;
  for (T& v : y.v) v = v > T(0) ? v : T(0);
  if (cache) cache->y = y;
  return y;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& dy, const ReluCache<T>& cache) {
  Tensor4<T> dx = dy;
  for (std::size_t i = 0; i < dx.v.size(); ++i)
    if (cache.y.v[i] <= T(0)) dx.v[i] = T(0);
  return dx;
}

template <typename T>
struct GapCache {
  int h = 0, w = 0;
};

// Spatial mean per channel -> (n, c, 1, 1).
template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x, GapCache<T>* cache = nullptr) {
  Tensor4<T> y(x.n, x.c, 1, 1);
  T inv = T(1) / static_cast<T>(static_cast<std::size_t>(x.h) * x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      T s = T(0);
      for (int ih = 0; ih < x.h; ++ih) {
        const T* r = x.row(n, c, ih);
        for (int iw = 0; iw < x.w; ++iw) s += r[iw];
      }
      y.at(n, c, 0, 0) = s * inv;
    }
  if (cache) {
    cache->h = x.h;
    cache->w = x.w;
  }
  return y;
}

template <typename T>
Tensor4<T> global_avg_pool_backward(const Tensor4<T>& dy, const GapCache<T>& cache) {
  Tensor4<T> dx(dy.n, dy.c, cache.h, cache.w);
  T inv = T(1) / static_cast<T>(static_cast<std::size_t>(cache.h) * cache.w);
  for (int n = 0; n < dy.n; ++n)
    for (int c = 0; c < dy.c; ++c) {
      T g = dy.at(n, c, 0, 0) * inv;
      for (int ih = 0; ih < cache.h; ++ih) {
        T* r = dx.row(n, c, ih);
        for (int iw = 0; iw < cache.w; ++iw) r[iw] = g;
      }
    }
  return dx;
}

template <typename T>
struct LinearCache {
  Tensor4<T> x;
};

// Affine map on (n, in, 1, 1) -> (n, out, 1, 1).
template <typename T>
struct Linear {
  int in = 0, out = 0;
  std::vector<T> w, b, gw, gb;  // w is out x in, row-major

  Linear() = default;
  Linear(int in_, int out_)
      : in(in_), out(out_), w(static_cast<std::size_t>(in_) * out_, T(0)),
        b(out_, T(0)), gw(w.size(), T(0)), gb(out_, T(0)) {}

  std::size_t param_count() const { return w.size() + b.size(); }

  void init(Rng& rng) {
    double std = std::sqrt(2.0 / static_cast<double>(in));
    for (T& x : w) x = static_cast<T>(std * rng.gaussian());
    std::fill(b.begin(), b.end(), T(0));
  }

  void zero_grad() {
    std::fill(gw.begin(), gw.end(), T(0));
    std::fill(gb.begin(), gb.end(), T(0));
  }

  Tensor4<T> forward(const Tensor4<T>& x, LinearCache<T>* cache) const {
    if (x.c != in || x.h != 1 || x.w != 1)
      throw ShapeError("linear: expected (n," + std::to_string(in) + ",1,1), got " +
                       x.shape_str());
    Tensor4<T> y(x.n, out, 1, 1);
    for (int n = 0; n < x.n; ++n)
      for (int o = 0; o < out; ++o) {
        T s = b[o];
        const T* wr = w.data() + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) s += wr[i] * x.at(n, i, 0, 0);
        y.at(n, o, 0, 0) = s;
      }
    if (cache) cache->x = x;
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy, const LinearCache<T>& cache) {
    const Tensor4<T>& x = cache.x;
    Tensor4<T> dx(x.n, in, 1, 1);
    for (int n = 0; n < x.n; ++n)
      for (int o = 0; o < out; ++o) {
        T d = dy.at(n, o, 0, 0);
        gb[o] += d;
        T* gwr = gw.data() + static_cast<std::size_t>(o) * in;
        const T* wr = w.data() + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) {
          gwr[i] += d * x.at(n, i, 0, 0);
          dx.at(n, i, 0, 0) += d * wr[i];
        }
      }
    return dx;
  }
};

// ---- Binary heads -------------------------------------------------------

// Width-2 softmax cross-entropy for one sample. p_usable is the probability
// of the coherent class (index 1).
template <typename T>
struct HeadResult {
  T loss;
  T p_usable;
};

template <typename T>
HeadResult<T> softmax_ce(T logit0, T logit1, int label) {
  T m = std::max(logit0, logit1);
  T e0 = std::exp(logit0 - m);
  T e1 = std::exp(logit1 - m);
  T z = e0 + e1;
  T p1 = e1 / z;
  T log_z = m + std::log(z);
  T loss = log_z - (label == 1 ? logit1 : logit0);
  return {loss, p1};
}

// d(loss)/d(logits) for softmax_ce.
template <typename T>
void softmax_ce_grad(T logit0, T logit1, int label, T& d0, T& d1) {
  T m = std::max(logit0, logit1);
  T e0 = std::exp(logit0 - m);
  T e1 = std::exp(logit1 - m);
  T z = e0 + e1;
  d0 = e0 / z - (label == 0 ? T(1) : T(0));
  d1 = e1 / z - (label == 1 ? T(1) : T(0));
}

template <typename T>
HeadResult<T> sigmoid_bce(T logit, int label) {
  T p = T(1) / (T(1) + std::exp(-logit));
  // loss = softplus(logit) - label*logit, computed stably
  T softplus = std::max(logit, T(0)) + std::log1p(std::exp(-std::abs(logit)));
  return {softplus - static_cast<T>(label) * logit, p};
}

template <typename T>
T sigmoid_bce_grad(T logit, int label) {
  T p = T(1) / (T(1) + std::exp(-logit));
  return p - static_cast<T>(label);
}

// Batched head over logits (n, width, 1, 1). Returns mean loss, per-sample
// usable probabilities, and d(mean loss)/d(logits).
template <typename T>
struct BatchHeadResult {
  T mean_loss;
  std::vector<T> p_usable;
  Tensor4<T> dlogits;
};

template <typename T>
BatchHeadResult<T> binary_head(const Tensor4<T>& logits, const std::vector<int>& labels) {
  if (logits.c != 1 && logits.c != 2)
    throw ShapeError("binary head requires bottleneck width 1 or 2");
  if (static_cast<std::size_t>(logits.n) != labels.size())
    throw ShapeError("binary head: label count mismatch");
  BatchHeadResult<T> r;
  r.dlogits = Tensor4<T>(logits.n, logits.c, 1, 1);
  r.p_usable.resize(logits.n);
  T inv_n = T(1) / static_cast<T>(logits.n);
  T total = T(0);
  for (int n = 0; n < logits.n; ++n) {
    if (logits.c == 2) {
      auto hr = softmax_ce(logits.at(n, 0, 0, 0), logits.at(n, 1, 0, 0), labels[n]);
      total += hr.loss;
      r.p_usable[n] = hr.p_usable;
      T d0, d1;
      softmax_ce_grad(logits.at(n, 0, 0, 0), logits.at(n, 1, 0, 0), labels[n], d0, d1);
      r.dlogits.at(n, 0, 0, 0) = d0 * inv_n;
      r.dlogits.at(n, 1, 0, 0) = d1 * inv_n;
    } else {
      auto hr = sigmoid_bce(logits.at(n, 0, 0, 0), labels[n]);
      total += hr.loss;
      r.p_usable[n] = hr.p_usable;
      r.dlogits.at(n, 0, 0, 0) = sigmoid_bce_grad(logits.at(n, 0, 0, 0), labels[n]) * inv_n;
    }
  }
  r.mean_loss = total * inv_n;
  return r;
}

}  // namespace nn

// ---- Optimizer -----------------------------------------------------------

template <typename T>
struct SgdState {
  std::vector<std::vector<T>> velocity;
};

// v <- momentum*v + g; theta <- theta - lr*v
template <typename T>
void sgd_step(const std::vector<ParamRef<T>>& params, SgdState<T>& state,
              T lr, T momentum) {
  if (!(lr > T(0))) throw SpecError("sgd_step: lr must be > 0");
  if (!(momentum >= T(0) && momentum < T(1)))
    throw SpecError("sgd_step: momentum must be in [0,1)");
  if (state.velocity.empty()) {
    state.velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      state.velocity[i].assign(params[i].size, T(0));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamRef<T>& p = params[i];
    std::vector<T>& v = state.velocity[i];
    for (std::size_t j = 0; j < p.size; ++j) {
      T g = p.grad[j];
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("sgd_step: non-finite gradient");
      v[j] = momentum * v[j] + g;
      p.data[j] -= lr * v[j];
    }
  }
}

// Central-difference gradient oracle. f() must evaluate the loss with the
// current parameter values; params are perturbed in place and restored.
template <typename T>
std::vector<std::vector<T>> finite_diff_grad(const std::function<T()>& f,
                                             const std::vector<ParamRef<T>>& params,
                                             T eps) {
  if (!(eps > T(0))) throw SpecError("finite_diff_grad: eps must be > 0");
  std::vector<std::vector<T>> grads(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads[i].resize(params[i].size);
    for (std::size_t j = 0; j < params[i].size; ++j) {
      T saved = params[i].data[j];
      params[i].data[j] = saved + eps;
      T fp = f();
      params[i].data[j] = saved - eps;
      T fm = f();
      params[i].data[j] = saved;
      grads[i][j] = (fp - fm) / (T(2) * eps);
    }
  }
  return grads;
}

}  // namespace seisbench
