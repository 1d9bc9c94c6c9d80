#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "matchinggan/autograd.hpp"
#include "matchinggan/ops.hpp"
#include "matchinggan/random.hpp"

// The matching procedure: cosine similarities in a shared embedding space
// turned into softmax interpolation coefficients, and convex fusion of
// per-conditional features with those coefficients.
//
// Batched layout: B episodes of K conditionals each. Per-conditional tensors
// carry B*K items on their leading axis, episode-major.

namespace mgan {

inline constexpr double kCosineNormFloor = 1e-8;

namespace detail {

template <class T>
double dot(const T* a, const T* b, int n) {
  double s = 0;
  for (int i = 0; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace detail

// scores[b, i] = softmax_i cos(z_emb[b], cond_emb[b*K + i]).
//
// The softmax denominator is accumulated in ascending order of its terms, so
// permuting the conditionals permutes the scores without changing any bit.
template <class T>
ag::Var<T> similarity_scores(const ag::Var<T>& z_emb, const ag::Var<T>& cond_emb, int k) {
  if (k < 1) throw UsageError("similarity_scores: K must be >= 1");
  if (z_emb.value().rank() != 2 || cond_emb.value().rank() != 2)
    throw ShapeError("similarity_scores: embeddings must be [N, d]");
  const int b = z_emb.dim(0), d = z_emb.dim(1);
  if (cond_emb.dim(0) != b * k || cond_emb.dim(1) != d)
    throw ShapeError("similarity_scores: condition embeddings " + shape_str(cond_emb.shape()) +
                     " do not match " + std::to_string(b) + " episodes of K=" + std::to_string(k) +
                     " with d=" + std::to_string(d));
  if (!z_emb.value().all_finite() || !cond_emb.value().all_finite())
    throw NumericError("similarity_scores: non-finite embedding");

  const T* zv = z_emb.value().data();
  const T* cv = cond_emb.value().data();
  std::vector<double> zn(b), cn(static_cast<std::size_t>(b) * k), cosv(static_cast<std::size_t>(b) * k);
  for (int e = 0; e < b; ++e) zn[e] = std::sqrt(detail::dot(zv + e * d, zv + e * d, d));
  for (int i = 0; i < b * k; ++i) cn[i] = std::sqrt(detail::dot(cv + i * d, cv + i * d, d));

  Tensor<T> scores({b, k});
  std::vector<double> ex(k);
  for (int e = 0; e < b; ++e) {
    const double nu = std::max(zn[e], kCosineNormFloor);
    for (int i = 0; i < k; ++i) {
      const int idx = e * k + i;
      const double nv = std::max(cn[idx], kCosineNormFloor);
      cosv[idx] = detail::dot(zv + e * d, cv + static_cast<std::size_t>(idx) * d, d) / (nu * nv);
    }
    const double mx = *std::max_element(cosv.begin() + e * k, cosv.begin() + (e + 1) * k);
    for (int i = 0; i < k; ++i) ex[i] = std::exp(cosv[e * k + i] - mx);
    std::vector<double> sorted = ex;
    std::sort(sorted.begin(), sorted.end());
    double denom = 0;
    for (double v : sorted) denom += v;
    for (int i = 0; i < k; ++i) scores[static_cast<std::size_t>(e) * k + i] = static_cast<T>(ex[i] / denom);
  }

  return ag::make_result<T>(
      std::move(scores), {z_emb, cond_emb},
      [b, d, k, zn = std::move(zn), cn = std::move(cn), cosv = std::move(cosv)](ag::Node<T>& self) {
        const T* zv2 = self.parents[0]->value.data();
        const T* cv2 = self.parents[1]->value.data();
        auto* gz = ag::parent_grad(self, 0);
        auto* gc = ag::parent_grad(self, 1);
        for (int e = 0; e < b; ++e) {
          // d loss / d cos_i = s_i (g_i - sum_k s_k g_k)
          double sg = 0;
          for (int i = 0; i < k; ++i)
            sg += static_cast<double>(self.value[e * k + i]) * self.grad[e * k + i];
          const double nu = std::max(zn[e], kCosineNormFloor);
          const bool u_floored = zn[e] <= kCosineNormFloor;
          for (int i = 0; i < k; ++i) {
            const int idx = e * k + i;
            const double gcos = self.value[idx] * (self.grad[idx] - sg);
            const double nv = std::max(cn[idx], kCosineNormFloor);
            const bool v_floored = cn[idx] <= kCosineNormFloor;
            const T* u = zv2 + static_cast<std::size_t>(e) * d;
            const T* v = cv2 + static_cast<std::size_t>(idx) * d;
            for (int j = 0; j < d; ++j) {
              if (gz) {
                double du = v[j] / (nu * nv);
                if (!u_floored) du -= cosv[idx] * u[j] / (nu * nu);
                (*gz)[static_cast<std::size_t>(e) * d + j] += static_cast<T>(gcos * du);
              }
              if (gc) {
                double dv = u[j] / (nu * nv);
                if (!v_floored) dv -= cosv[idx] * v[j] / (nv * nv);
                (*gc)[static_cast<std::size_t>(idx) * d + j] += static_cast<T>(gcos * dv);
              }
            }
          }
        }
      });
}

// Order in which an episode's conditionals are accumulated during fusion:
// ascending score, ties broken by the conditionals' feature values. The order
// depends only on the multiset of (score, features) pairs, never on input
// positions, which makes fusion bitwise permutation invariant.
template <class T>
std::vector<std::vector<int>> canonical_fusion_order(const Tensor<T>& scores,
                                                     const std::vector<const Tensor<T>*>& levels) {
  const int b = scores.dim(0), k = scores.dim(1);
  std::vector<std::vector<int>> order(b);
  for (int e = 0; e < b; ++e) {
    auto& o = order[e];
    o.resize(k);
    std::iota(o.begin(), o.end(), 0);
    std::sort(o.begin(), o.end(), [&](int i, int j) {
      const T si = scores[static_cast<std::size_t>(e) * k + i];
      const T sj = scores[static_cast<std::size_t>(e) * k + j];
      if (si != sj) return si < sj;
      for (const auto* lvl : levels) {
        auto a = lvl->item(e * k + i);
        auto c = lvl->item(e * k + j);
        auto mm = std::mismatch(a.begin(), a.end(), c.begin());
        if (mm.first != a.end()) return *mm.first < *mm.second;
      }
      return false;
    });
  }
  return order;
}

// fused[b] = sum_i scores[b, i] * features[b*K + i], accumulated in `order`
// (natural order when empty).
template <class T>
ag::Var<T> fuse_features(const ag::Var<T>& scores, const ag::Var<T>& features,
                         std::vector<std::vector<int>> order = {}) {
  if (scores.value().rank() != 2) throw ShapeError("fuse_features: scores must be [B, K]");
  const int b = scores.dim(0), k = scores.dim(1);
  if (features.value().rank() < 2 || features.dim(0) != b * k)
    throw ShapeError("fuse_features: features " + shape_str(features.shape()) + " do not hold " +
                     std::to_string(b) + "x" + std::to_string(k) + " conditionals");
  if (order.empty()) {
    order.assign(b, std::vector<int>(k));
    for (auto& o : order) std::iota(o.begin(), o.end(), 0);
  }
  Shape shape = features.shape();
  shape[0] = b;
  Tensor<T> out(shape);
  const std::size_t stride = out.size() / static_cast<std::size_t>(b);
  const T* fv = features.value().data();
  for (int e = 0; e < b; ++e) {
    T* dst = out.data() + e * stride;
    for (int i : order[e]) {
      const T s = scores.value()[static_cast<std::size_t>(e) * k + i];
      const T* src = fv + (static_cast<std::size_t>(e) * k + i) * stride;
      for (std::size_t j = 0; j < stride; ++j) dst[j] += s * src[j];
    }
  }
  return ag::make_result<T>(std::move(out), {scores, features}, [b, k, stride](ag::Node<T>& self) {
    const T* sv = self.parents[0]->value.data();
    const T* fv2 = self.parents[1]->value.data();
    auto* gs = ag::parent_grad(self, 0);
    auto* gf = ag::parent_grad(self, 1);
    for (int e = 0; e < b; ++e) {
      const T* g = self.grad.data() + e * stride;
      for (int i = 0; i < k; ++i) {
        const std::size_t idx = static_cast<std::size_t>(e) * k + i;
        if (gs) (*gs)[idx] += static_cast<T>(detail::dot(g, fv2 + idx * stride, static_cast<int>(stride)));
        if (gf) {
          T* dst = gf->data() + idx * stride;
          for (std::size_t j = 0; j < stride; ++j) dst[j] += sv[idx] * g[j];
        }
      }
    }
  });
}

// Weighted reconstruction loss, averaged over episodes:
//   mean_b sum_i scores[b, i] * meanAbs(conditionals[b*K + i] - generated[b]).
template <class T>
ag::Var<T> weighted_reconstruction_loss(const ag::Var<T>& scores, const ag::Var<T>& conditionals,
                                        const ag::Var<T>& generated) {
  if (scores.value().rank() != 2) throw ShapeError("weighted_reconstruction_loss: scores must be [B, K]");
  const int b = scores.dim(0), k = scores.dim(1);
  Shape item_c(conditionals.shape().begin() + 1, conditionals.shape().end());
  Shape item_g(generated.shape().begin() + 1, generated.shape().end());
  if (conditionals.dim(0) != b * k || generated.dim(0) != b || item_c != item_g)
    throw ShapeError("weighted_reconstruction_loss: conditionals " + shape_str(conditionals.shape()) +
                     " and generated " + shape_str(generated.shape()) + " are incompatible with scores " +
                     shape_str(scores.shape()));
  const std::size_t stride = shape_numel(item_g);
  std::vector<double> dist(static_cast<std::size_t>(b) * k);
  double total = 0;
  for (int e = 0; e < b; ++e)
    for (int i = 0; i < k; ++i) {
      const std::size_t idx = static_cast<std::size_t>(e) * k + i;
      const T* x = conditionals.value().data() + idx * stride;
      const T* y = generated.value().data() + static_cast<std::size_t>(e) * stride;
      double s = 0;
      for (std::size_t j = 0; j < stride; ++j) s += std::abs(static_cast<double>(x[j]) - y[j]);
      dist[idx] = s / static_cast<double>(stride);
      total += scores.value()[idx] * dist[idx];
    }
  return ag::make_result<T>(
      Tensor<T>({1}, std::vector<T>{static_cast<T>(total / b)}), {scores, conditionals, generated},
      [b, k, stride, dist = std::move(dist)](ag::Node<T>& self) {
        const double g = self.grad[0] / static_cast<double>(b);
        const T* sv = self.parents[0]->value.data();
        const T* xv = self.parents[1]->value.data();
        const T* yv = self.parents[2]->value.data();
        auto* gs = ag::parent_grad(self, 0);
        auto* gx = ag::parent_grad(self, 1);
        auto* gy = ag::parent_grad(self, 2);
        for (int e = 0; e < b; ++e)
          for (int i = 0; i < k; ++i) {
            const std::size_t idx = static_cast<std::size_t>(e) * k + i;
            if (gs) (*gs)[idx] += static_cast<T>(g * dist[idx]);
            if (!gx && !gy) continue;
            const T w = static_cast<T>(g * sv[idx] / static_cast<double>(stride));
            for (std::size_t j = 0; j < stride; ++j) {
              const T diff = xv[idx * stride + j] - yv[static_cast<std::size_t>(e) * stride + j];
              const T sgn = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
              if (gx) (*gx)[idx * stride + j] += w * sgn;
              if (gy) (*gy)[static_cast<std::size_t>(e) * stride + j] -= w * sgn;
            }
          }
      });
}

// Normalised i.i.d. uniform draws: the matching-free interpolation baseline.
inline std::vector<double> random_coefficients(int k, Rng& rng) {
  if (k < 1) throw UsageError("random_coefficients: K must be >= 1");
  std::vector<double> a(k);
  double sum = 0;
  for (auto& v : a) sum += (v = uniform_open(rng));
  for (auto& v : a) v /= sum;
  return a;
}

// ---------------------------------------------------------------------------
// Plain-value conveniences for single episodes.

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("cosine_similarity: dimension mismatch");
  const double nu = std::max(std::sqrt(detail::dot(u.data(), u.data(), static_cast<int>(u.size()))), kCosineNormFloor);
  const double nv = std::max(std::sqrt(detail::dot(v.data(), v.data(), static_cast<int>(v.size()))), kCosineNormFloor);
  return detail::dot(u.data(), v.data(), static_cast<int>(u.size())) / (nu * nv);
}

// Single-episode scores from one noise embedding and K condition embeddings.
inline std::vector<double> similarity_scores(std::span<const double> z_emb,
                                             const std::vector<std::vector<double>>& cond_embs) {
  const int k = static_cast<int>(cond_embs.size());
  if (k < 1) throw UsageError("similarity_scores: K must be >= 1");
  const int d = static_cast<int>(z_emb.size());
  Tensor<double> zt({1, d}, std::vector<double>(z_emb.begin(), z_emb.end()));
  Tensor<double> ct({k, d});
  for (int i = 0; i < k; ++i) {
    if (static_cast<int>(cond_embs[i].size()) != d)
      throw ShapeError("similarity_scores: embedding " + std::to_string(i) + " has dimension " +
                       std::to_string(cond_embs[i].size()) + ", expected " + std::to_string(d));
    std::copy(cond_embs[i].begin(), cond_embs[i].end(), ct.data() + static_cast<std::size_t>(i) * d);
  }
  ag::NoGradGuard ng;
  auto s = similarity_scores(ag::Var<double>::constant(zt), ag::Var<double>::constant(ct), k);
  return s.value().storage();
}

}  // namespace mgan
