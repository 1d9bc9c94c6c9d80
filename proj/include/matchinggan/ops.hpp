#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "matchinggan/autograd.hpp"
#include "matchinggan/random.hpp"
#include "matchinggan/tensor.hpp"

// Differentiable tensor operations. Each op computes its forward value
// eagerly and registers a closure that accumulates parent gradients.

namespace mgan::ops {

using ag::make_result;
using ag::Node;
using ag::parent_grad;
using ag::Var;

namespace detail {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

inline void require_rank(const Shape& s, int rank, const char* op) {
  if (static_cast<int>(s.size()) != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Output columns [lo, hi) whose input column ox * stride - pad + kx is in range.
inline void valid_span(int out_w, int width, int stride, int pad, int kx, int& lo, int& hi) {
  lo = std::max(0, (pad - kx + stride - 1) / stride);
  hi = std::min(out_w, (width - 1 + pad - kx) / stride + 1);
  if (width - 1 + pad - kx < 0) hi = 0;
  hi = std::max(hi, lo);
}

template <class T>
void im2col(const T* x, int channels, int height, int width, int k, int stride, int pad, int out_h,
            int out_w, T* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        int lo, hi;
        valid_span(out_w, width, stride, pad, kx, lo, hi);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * height + iy) * width - pad + kx;
          std::fill(dst, dst + lo, T(0));
          if (stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
          }
          std::fill(dst + hi, dst + out_w, T(0));
        }
      }
}

template <class T>
void col2im_add(const T* col, int channels, int height, int width, int k, int stride, int pad,
                int out_h, int out_w, T* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        int lo, hi;
        valid_span(out_w, width, stride, pad, kx, lo, hi);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          T* dst = x + (static_cast<std::size_t>(c) * height + iy) * width - pad + kx;
          const T* src = row + oy * out_w;
          for (int ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
        }
      }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = parent_grad(self, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

// a * s + c
template <class T>
Var<T> affine_scalar(const Var<T>& a, T s, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v * s + c;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return affine_scalar(a, s, T(0));
}

template <class T>
Var<T> mean(const Var<T>& a) {
  if (a.value().empty()) throw UsageError("mean of empty tensor");
  double acc = 0;
  for (T v : a.value().values()) acc += v;
  const double n = static_cast<double>(a.value().size());
  return make_result<T>(Tensor<T>({1}, std::vector<T>{static_cast<T>(acc / n)}), {a},
                        [n](Node<T>& self) {
                          if (auto* g = parent_grad(self, 0)) {
                            const T d = static_cast<T>(self.grad[0] / n);
                            for (auto& v : g->values()) v += d;
                          }
                        });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const auto& x = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i)
        if (x[i] > T(0)) (*g)[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : v * slope;
  return make_result<T>(std::move(out), {a}, [slope](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const auto& x = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += x[i] > T(0) ? self.grad[i] : slope * self.grad[i];
    }
  });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += (T(1) - self.value[i] * self.value[i]) * self.grad[i];
  });
}

// Mean absolute difference over all elements; the L1 reduction used by the
// reconstruction and feature matching losses.
template <class T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mean_abs_diff");
  double acc = 0;
  for (std::size_t i = 0; i < a.value().size(); ++i) acc += std::abs(a.value()[i] - b.value()[i]);
  const double n = static_cast<double>(a.value().size());
  return make_result<T>(Tensor<T>({1}, std::vector<T>{static_cast<T>(acc / n)}), {a, b},
                        [n](Node<T>& self) {
                          const auto& x = self.parents[0]->value;
                          const auto& y = self.parents[1]->value;
                          const T d = static_cast<T>(self.grad[0] / n);
                          auto* ga = parent_grad(self, 0);
                          auto* gb = parent_grad(self, 1);
                          for (std::size_t i = 0; i < x.size(); ++i) {
                            const T diff = x[i] - y[i];
                            const T s = diff > T(0) ? d : (diff < T(0) ? -d : T(0));
                            if (ga) (*ga)[i] += s;
                            if (gb) (*gb)[i] -= s;
                          }
                        });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

// Concatenate along the leading (batch) axis.
template <class T>
Var<T> concat_batch(const Var<T>& a, const Var<T>& b) {
  Shape sa(a.shape().begin() + 1, a.shape().end()), sb(b.shape().begin() + 1, b.shape().end());
  detail::require_same(sa, sb, "concat_batch");
  Shape shape = a.shape();
  shape[0] += b.shape()[0];
  Tensor<T> out(shape);
  std::copy(a.value().values().begin(), a.value().values().end(), out.data());
  std::copy(b.value().values().begin(), b.value().values().end(), out.data() + a.value().size());
  const std::size_t na = a.value().size();
  return make_result<T>(std::move(out), {a, b}, [na](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[na + i];
  });
}

// Items [start, start + count) of the leading axis.
template <class T>
Var<T> slice_batch(const Var<T>& a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.dim(0))
    throw ShapeError("slice_batch: range out of bounds for " + shape_str(a.shape()));
  Shape shape = a.shape();
  shape[0] = count;
  const std::size_t stride = a.value().size() / static_cast<std::size_t>(a.dim(0));
  const std::size_t off = stride * static_cast<std::size_t>(start);
  Tensor<T> out(shape);
  std::copy_n(a.value().data() + off, out.size(), out.data());
  return make_result<T>(std::move(out), {a}, [off](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[off + i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Layers

// y[n, o] = sum_i x[n, i] * w[o, i] + b[o]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::require_rank(x.shape(), 2, "linear");
  detail::require_rank(w.shape(), 2, "linear weight");
  const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in)
    throw ShapeError("linear: input width " + std::to_string(in) + " does not match weight " +
                     shape_str(w.shape()));
  require_shape(b.value(), Shape{out_dim}, "linear bias");
  // Plain dot products keep each row independent of the batch size.
  Tensor<T> out({n, out_dim});
  const T* xv = x.value().data();
  const T* wv = w.value().data();
  for (int r = 0; r < n; ++r)
    for (int o = 0; o < out_dim; ++o) {
      T acc = 0;
      for (int i = 0; i < in; ++i) acc += xv[static_cast<std::size_t>(r) * in + i] * wv[static_cast<std::size_t>(o) * in + i];
      out[static_cast<std::size_t>(r) * out_dim + o] = acc + b.value()[o];
    }
  return make_result<T>(std::move(out), {x, w, b}, [n, in, out_dim](Node<T>& self) {
    detail::CMapR<T> gy(self.grad.data(), n, out_dim);
    if (auto* gx = parent_grad(self, 0))
      detail::MapR<T>(gx->data(), n, in).noalias() +=
          gy * detail::CMapR<T>(self.parents[1]->value.data(), out_dim, in);
    if (auto* gw = parent_grad(self, 1))
      detail::MapR<T>(gw->data(), out_dim, in).noalias() +=
          gy.transpose() * detail::CMapR<T>(self.parents[0]->value.data(), n, in);
    if (auto* gb = parent_grad(self, 2))
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < out_dim; ++o) (*gb)[o] += gy(r, o);
  });
}

// 2-D convolution, square kernel, NCHW. `b` may be undefined for no bias.
// Each batch item is processed with its own GEMM so results never depend on
// where an item sits inside the batch.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  detail::require_rank(x.shape(), 4, "conv2d");
  detail::require_rank(w.shape(), 4, "conv2d weight");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c || w.dim(3) != k)
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (wd + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: input " + shape_str(x.shape()) + " too small");
  const bool has_bias = b.defined();
  if (has_bias) require_shape(b.value(), Shape{o}, "conv2d bias");
  const bool direct = (k == 1 && stride == 1 && pad == 0);
  const int ck = c * k * k, plane = oh * ow;

  Tensor<T> out({n, o, oh, ow});
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(ck) * plane);
  detail::CMapR<T> wm(w.value().data(), o, ck);
  for (int i = 0; i < n; ++i) {
    const T* xi = x.value().data() + static_cast<std::size_t>(i) * c * h * wd;
    const T* cp = xi;
    if (!direct) {
      detail::im2col(xi, c, h, wd, k, stride, pad, oh, ow, col.data());
      cp = col.data();
    }
    detail::MapR<T> yi(out.data() + static_cast<std::size_t>(i) * o * plane, o, plane);
    yi.noalias() = wm * detail::CMapR<T>(cp, ck, plane);
    if (has_bias)
      for (int r = 0; r < o; ++r) yi.row(r).array() += b.value()[r];
  }

  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_result<T>(
      std::move(out), std::move(parents),
      [=](Node<T>& self) {
        const T* xv = self.parents[0]->value.data();
        const T* wv = self.parents[1]->value.data();
        auto* gx = parent_grad(self, 0);
        auto* gw = parent_grad(self, 1);
        auto* gb = has_bias ? parent_grad(self, 2) : nullptr;
        std::vector<T> colb(direct ? 0 : static_cast<std::size_t>(ck) * plane);
        std::vector<T> dcol(gx && !direct ? static_cast<std::size_t>(ck) * plane : 0);
        detail::CMapR<T> wm2(wv, o, ck);
        for (int i = 0; i < n; ++i) {
          const T* xi = xv + static_cast<std::size_t>(i) * c * h * wd;
          detail::CMapR<T> gy(self.grad.data() + static_cast<std::size_t>(i) * o * plane, o, plane);
          if (gw) {
            const T* cp = xi;
            if (!direct) {
              detail::im2col(xi, c, h, wd, k, stride, pad, oh, ow, colb.data());
              cp = colb.data();
            }
            detail::MapR<T>(gw->data(), o, ck).noalias() +=
                gy * detail::CMapR<T>(cp, ck, plane).transpose();
          }
          if (gb)
            for (int r = 0; r < o; ++r) {
              // Fixed summation order: Eigen's redux peels by pointer alignment.
              const T* g = self.grad.data() + (static_cast<std::size_t>(i) * o + r) * plane;
              T acc = 0;
              for (int j = 0; j < plane; ++j) acc += g[j];
              (*gb)[r] += acc;
            }
          if (gx) {
            T* gxi = gx->data() + static_cast<std::size_t>(i) * c * h * wd;
            if (direct) {
              detail::MapR<T>(gxi, ck, plane).noalias() += wm2.transpose() * gy;
            } else {
              detail::MapR<T>(dcol.data(), ck, plane).noalias() = wm2.transpose() * gy;
              detail::col2im_add(dcol.data(), c, h, wd, k, stride, pad, oh, ow, gxi);
            }
          }
        }
      });
}

enum class NormMode {
  Inference,    // running statistics
  TrainFrozen,  // batch statistics, running statistics left untouched
  Train         // batch statistics, running statistics updated
};

// Per-channel batch normalization over (N, H, W).
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, NormMode mode, double momentum = 0.1, double eps = 1e-5) {
  detail::require_rank(x.shape(), 4, "batch_norm");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require_shape(gamma.value(), Shape{c}, "batch_norm gamma");
  require_shape(beta.value(), Shape{c}, "batch_norm beta");
  const std::size_t m = static_cast<std::size_t>(n) * hw;

  std::vector<T> mu(c), inv_std(c);
  const auto& xv = x.value();
  if (mode == NormMode::Inference) {
    for (int ch = 0; ch < c; ++ch) {
      mu[ch] = running_mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps));
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0, ss = 0;
      for (int i = 0; i < n; ++i) {
        const T* p = xv.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (int j = 0; j < hw; ++j) s += p[j];
      }
      const double mean_v = s / static_cast<double>(m);
      for (int i = 0; i < n; ++i) {
        const T* p = xv.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (int j = 0; j < hw; ++j) ss += (p[j] - mean_v) * (p[j] - mean_v);
      }
      const double var = ss / static_cast<double>(m);
      mu[ch] = static_cast<T>(mean_v);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + eps));
      if (mode == NormMode::Train) {
        const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
        running_mean[ch] = static_cast<T>((1 - momentum) * running_mean[ch] + momentum * mean_v);
        running_var[ch] = static_cast<T>((1 - momentum) * running_var[ch] + momentum * unbiased);
      }
    }
  }

  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int j = 0; j < hw; ++j) {
        const T v = (xv[base + j] - mu[ch]) * inv_std[ch];
        xhat[base + j] = v;
        out[base + j] = gamma.value()[ch] * v + beta.value()[ch];
      }
    }

  const bool batch_stats = mode != NormMode::Inference;
  return make_result<T>(
      std::move(out), {x, gamma, beta},
      [n, c, hw, m, batch_stats, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node<T>& self) {
        const auto& g = self.grad;
        const auto& gam = self.parents[1]->value;
        auto* gx = parent_grad(self, 0);
        auto* gg = parent_grad(self, 1);
        auto* gbeta = parent_grad(self, 2);
        for (int ch = 0; ch < c; ++ch) {
          double sum_g = 0, sum_gx = 0;
          for (int i = 0; i < n; ++i) {
            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
            for (int j = 0; j < hw; ++j) {
              sum_g += g[base + j];
              sum_gx += static_cast<double>(g[base + j]) * xhat[base + j];
            }
          }
          if (gg) (*gg)[ch] += static_cast<T>(sum_gx);
          if (gbeta) (*gbeta)[ch] += static_cast<T>(sum_g);
          if (!gx) continue;
          const T scale_v = gam[ch] * inv_std[ch];
          const double md = static_cast<double>(m);
          for (int i = 0; i < n; ++i) {
            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
            for (int j = 0; j < hw; ++j) {
              if (batch_stats)
                (*gx)[base + j] += static_cast<T>(
                    scale_v * (g[base + j] - sum_g / md - xhat[base + j] * sum_gx / md));
              else
                (*gx)[base + j] += scale_v * g[base + j];
            }
          }
        }
      });
}

// Inverted dropout; identity when p == 0.
template <class T>
Var<T> dropout(const Var<T>& x, double p, Rng& rng) {
  if (p <= 0) return x;
  if (p >= 1) throw UsageError("dropout rate must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.value().size());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = uniform01(rng) >= p ? keep_scale : T(0);
    out[i] *= mask[i];
  }
  return make_result<T>(std::move(out), {x}, [mask = std::move(mask)](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += mask[i] * self.grad[i];
  });
}

template <class T>
Var<T> avg_pool2(const Var<T>& x) {
  detail::require_rank(x.shape(), 4, "avg_pool2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial size " + shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor<T> out({n, c, oh, ow});
  const auto& xv = x.value();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y)
        for (int z = 0; z < ow; ++z)
          out.at(i, ch, y, z) = T(0.25) * (xv.at(i, ch, 2 * y, 2 * z) + xv.at(i, ch, 2 * y, 2 * z + 1) +
                                           xv.at(i, ch, 2 * y + 1, 2 * z) +
                                           xv.at(i, ch, 2 * y + 1, 2 * z + 1));
  return make_result<T>(std::move(out), {x}, [n, c, oh, ow](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < oh; ++y)
            for (int z = 0; z < ow; ++z) {
              const T d = T(0.25) * self.grad[((static_cast<std::size_t>(i) * c + ch) * oh + y) * ow + z];
              g->at(i, ch, 2 * y, 2 * z) += d;
              g->at(i, ch, 2 * y, 2 * z + 1) += d;
              g->at(i, ch, 2 * y + 1, 2 * z) += d;
              g->at(i, ch, 2 * y + 1, 2 * z + 1) += d;
            }
  });
}

// [N, C, H, W] -> [N, C], mean over spatial positions.
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  detail::require_rank(x.shape(), 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out({n, c});
  for (int i = 0; i < n * c; ++i) {
    double s = 0;
    const T* p = x.value().data() + static_cast<std::size_t>(i) * hw;
    for (int j = 0; j < hw; ++j) s += p[j];
    out[i] = static_cast<T>(s / hw);
  }
  return make_result<T>(std::move(out), {x}, [n, c, hw](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (int i = 0; i < n * c; ++i) {
        const T d = self.grad[i] / static_cast<T>(hw);
        T* p = g->data() + static_cast<std::size_t>(i) * hw;
        for (int j = 0; j < hw; ++j) p[j] += d;
      }
  });
}

// Nearest-neighbour 2x upsampling.
template <class T>
Var<T> upsample2(const Var<T>& x) {
  detail::require_rank(x.shape(), 4, "upsample2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out({n, c, 2 * h, 2 * w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int z = 0; z < 2 * w; ++z) out.at(i, ch, y, z) = x.value().at(i, ch, y / 2, z / 2);
  return make_result<T>(std::move(out), {x}, [n, c, h, w](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < 2 * h; ++y)
            for (int z = 0; z < 2 * w; ++z)
              g->at(i, ch, y / 2, z / 2) +=
                  self.grad[((static_cast<std::size_t>(i) * c + ch) * 2 * h + y) * 2 * w + z];
  });
}

// Channelwise concatenation of two NCHW tensors.
template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  detail::require_rank(a.shape(), 4, "concat_channels");
  detail::require_rank(b.shape(), 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  const std::size_t sa = static_cast<std::size_t>(ca) * hw, sb = static_cast<std::size_t>(cb) * hw;
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.value().data() + i * sa, sa, out.data() + i * (sa + sb));
    std::copy_n(b.value().data() + i * sb, sb, out.data() + i * (sa + sb) + sa);
  }
  return make_result<T>(std::move(out), {a, b}, [n, sa, sb](Node<T>& self) {
    auto* ga = parent_grad(self, 0);
    auto* gb = parent_grad(self, 1);
    for (int i = 0; i < n; ++i) {
      const T* src = self.grad.data() + i * (sa + sb);
      if (ga)
        for (std::size_t j = 0; j < sa; ++j) (*ga)[i * sa + j] += src[j];
      if (gb)
        for (std::size_t j = 0; j < sb; ++j) (*gb)[i * sb + j] += src[sa + j];
    }
  });
}

// Mean over the batch of -log softmax(logits)[label].
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  detail::require_rank(logits.shape(), 2, "cross_entropy");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  for (int l : labels)
    if (l < 0 || l >= c)
      throw UsageError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(c) + ")");
  Tensor<T> probs({n, c});
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const T* row = logits.value().data() + static_cast<std::size_t>(i) * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < c; ++j) probs[static_cast<std::size_t>(i) * c + j] = static_cast<T>(std::exp(row[j] - mx) / z);
    total += mx + std::log(z) - row[labels[i]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<T>(Tensor<T>({1}, std::vector<T>{static_cast<T>(total / n)}), {logits},
                        [n, c, probs = std::move(probs), lab = std::move(lab)](Node<T>& self) {
                          if (auto* g = parent_grad(self, 0)) {
                            const T d = self.grad[0] / static_cast<T>(n);
                            for (int i = 0; i < n; ++i)
                              for (int j = 0; j < c; ++j) {
                                const std::size_t idx = static_cast<std::size_t>(i) * c + j;
                                (*g)[idx] += d * (probs[idx] - (j == lab[i] ? T(1) : T(0)));
                              }
                          }
                        });
}

}  // namespace mgan::ops
