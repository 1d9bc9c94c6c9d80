#pragma once

#include <cmath>
#include <vector>

// Dense symmetric eigendecomposition by cyclic Jacobi rotations, written
// without Eigen so it can check the Eigen-based metrics independently.

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

struct EigenPairs {
  std::vector<double> values;
  Matrix vectors;  // column j is the eigenvector of values[j]
};

inline EigenPairs jacobi_eigen(Matrix a, int sweeps = 100) {
  const std::size_t n = a.size();
  Matrix v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1;
  for (int s = 0; s < sweeps; ++s) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - sn * akq;
          a[k][q] = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - sn * aqk;
          a[q][k] = sn * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - sn * vkq;
          v[k][q] = sn * vkp + c * vkq;
        }
      }
  }
  EigenPairs out;
  for (std::size_t i = 0; i < n; ++i) out.values.push_back(a[i][i]);
  out.vectors = v;
  return out;
}

// V diag(sqrt(max(l, 0))) V^T
inline Matrix sqrt_spd(const Matrix& a) {
  const auto e = jacobi_eigen(a);
  const std::size_t n = a.size();
  Matrix out(n, std::vector<double>(n, 0.0));
  for (std::size_t k = 0; k < n; ++k) {
    const double r = std::sqrt(std::max(e.values[k], 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i][j] += e.vectors[i][k] * r * e.vectors[j][k];
  }
  return out;
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.size(), m = b[0].size(), k = b.size();
  Matrix out(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < m; ++j) out[i][j] += a[i][p] * b[p][j];
  return out;
}

// Frechet distance from first principles: trace of sqrt(A^1/2 B A^1/2) via
// the sum of square roots of its Jacobi eigenvalues.
inline double frechet(const std::vector<double>& mu_a, const Matrix& a, const std::vector<double>& mu_b,
                      const Matrix& b) {
  double d = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) d += (mu_a[i] - mu_b[i]) * (mu_a[i] - mu_b[i]);
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i][i] + b[i][i];
  const auto ra = sqrt_spd(a);
  const auto m = multiply(multiply(ra, b), ra);
  for (double l : jacobi_eigen(m).values) d -= 2 * std::sqrt(std::max(l, 0.0));
  return d;
}

}  // namespace oracle
