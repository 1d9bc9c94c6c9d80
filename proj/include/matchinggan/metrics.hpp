#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "matchinggan/errors.hpp"
#include "matchinggan/tensor.hpp"

namespace mgan {

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  int dim() const { return static_cast<int>(mean.size()); }
};

template <class T>
void require_rank_2(const Tensor<T>& t) {
  if (t.rank() != 2) throw ShapeError("expected [N, F] features, got " + shape_str(t.shape()));
}

// Row-major [N, F] features as a double matrix.
template <class T>
Eigen::MatrixXd feature_matrix(const Tensor<T>& feats) {
  require_rank_2(feats);
  Eigen::MatrixXd m(feats.dim(0), feats.dim(1));
  for (int i = 0; i < feats.dim(0); ++i)
    for (int j = 0; j < feats.dim(1); ++j) m(i, j) = static_cast<double>(feats[static_cast<std::size_t>(i) * feats.dim(1) + j]);
  return m;
}

// Sample mean and unbiased covariance, plus `eps` on the diagonal.
inline GaussianStats gaussian_stats(const Eigen::MatrixXd& x, double eps = 0) {
  if (x.rows() < 1) throw NumericError("gaussian_stats: empty feature set");
  GaussianStats s;
  s.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
  const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
  s.covariance = (centered.transpose() * centered) / denom;
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose());
  s.covariance.diagonal().array() += eps;
  return s;
}

// Principal square root of a symmetric positive semidefinite matrix;
// negative eigenvalues from rounding are floored at zero.
inline Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success) throw NumericError("sqrtm_psd: eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

inline void require_symmetric(const Eigen::MatrixXd& m, const char* what, double tol = 1e-9) {
  if (m.rows() != m.cols()) throw NumericError(std::string(what) + " is not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale)
    throw NumericError(std::string(what) + " is not symmetric");
}

namespace metric_detail {

// Tr((A^1/2 B A^1/2)^1/2), taken as the sum of singular values of
// A^1/2 B^1/2. Squaring small eigenvalues is avoided that way.
inline double cross_trace(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd m = sqrtm_psd(a) * sqrtm_psd(b);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues().sum();
}

}  // namespace metric_detail

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^1/2), clamped at zero.
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim() != b.dim() || a.covariance.rows() != a.dim() || b.covariance.rows() != b.dim())
    throw ShapeError("frechet_distance: dimension mismatch");
  require_symmetric(a.covariance, "first covariance");
  require_symmetric(b.covariance, "second covariance");
  const double mean_term = (a.mean - b.mean).squaredNorm();
  // Symmetrized over argument order.
  const double cross = 0.5 * (metric_detail::cross_trace(a.covariance, b.covariance) +
                              metric_detail::cross_trace(b.covariance, a.covariance));
  const double d = mean_term + a.covariance.trace() + b.covariance.trace() - 2 * cross;
  return std::max(0.0, d);
}

inline constexpr double kFidEpsilon = 1e-6;

inline double fid_from_features(const Eigen::MatrixXd& real, const Eigen::MatrixXd& fake) {
  if (real.cols() != fake.cols()) throw ShapeError("fid: feature widths differ");
  return frechet_distance(gaussian_stats(real, kFidEpsilon), gaussian_stats(fake, kFidEpsilon));
}

inline constexpr double kProbabilityFloor = 1e-12;

// exp(mean_i KL(p(y|x_i) || p(y))) with p(y) the average posterior.
inline double inception_score(const Eigen::MatrixXd& posteriors) {
  if (posteriors.rows() < 1) throw NumericError("inception_score: empty bank");
  if ((posteriors.array() < -1e-9).any() ||
      ((posteriors.rowwise().sum().array() - 1.0).abs() > 1e-6).any())
    throw NumericError("inception_score: rows are not probability vectors");
  const Eigen::RowVectorXd marginal = posteriors.colwise().mean();
  double kl = 0;
  for (Eigen::Index i = 0; i < posteriors.rows(); ++i)
    for (Eigen::Index c = 0; c < posteriors.cols(); ++c) {
      const double p = posteriors(i, c);
      if (p <= 0) continue;
      kl += p * (std::log(std::max(p, kProbabilityFloor)) - std::log(std::max(marginal(c), kProbabilityFloor)));
    }
  // Rounding can push the mean KL slightly outside [0, log C].
  const double mean_kl = std::clamp(kl / static_cast<double>(posteriors.rows()), 0.0,
                                    std::log(static_cast<double>(posteriors.cols())));
  return std::exp(mean_kl);
}

}  // namespace mgan
