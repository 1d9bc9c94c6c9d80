#include <catch_amalgamated.hpp>

#include <cmath>

#include "jacobi.hpp"
#include "matchinggan/metrics.hpp"
#include "matchinggan/random.hpp"

using mgan::GaussianStats;
using mgan::Rng;

namespace {

GaussianStats stats_1d(double mu, double var) {
  GaussianStats s;
  s.mean = Eigen::VectorXd::Constant(1, mu);
  s.covariance = Eigen::MatrixXd::Constant(1, 1, var);
  return s;
}

Eigen::MatrixXd random_spd(int n, Rng& rng, double ridge = 1e-3) {
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = mgan::standard_normal(rng);
  Eigen::MatrixXd s = a * a.transpose() / n;
  s.diagonal().array() += ridge;
  return 0.5 * (s + s.transpose());
}

oracle::Matrix to_rows(const Eigen::MatrixXd& m) {
  oracle::Matrix out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

Eigen::MatrixXd random_posteriors(int n, int c, Rng& rng) {
  Eigen::MatrixXd p(n, c);
  for (int i = 0; i < n; ++i) {
    double z = 0;
    const double temp = 0.1 + 5 * mgan::uniform01(rng);
    for (int j = 0; j < c; ++j) z += (p(i, j) = std::exp(temp * mgan::standard_normal(rng)));
    p.row(i) /= z;
  }
  return p;
}

}  // namespace

TEST_CASE("frechet distance closed-form 1-D examples", "[metrics]") {
  CHECK(mgan::frechet_distance(stats_1d(0, 1), stats_1d(0, 1)) == Catch::Approx(0).margin(1e-6));
  CHECK(mgan::frechet_distance(stats_1d(0, 1), stats_1d(1, 1)) == Catch::Approx(1.0).margin(1e-6));
  CHECK(mgan::frechet_distance(stats_1d(2, 4), stats_1d(2, 1)) == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("inception score closed-form examples", "[metrics]") {
  Eigen::MatrixXd same(3, 2);
  same << 0.3, 0.7, 0.3, 0.7, 0.3, 0.7;
  CHECK(mgan::inception_score(same) == Catch::Approx(1.0).margin(1e-6));
  Eigen::MatrixXd onehot(2, 2);
  onehot << 1, 0, 0, 1;
  CHECK(mgan::inception_score(onehot) == Catch::Approx(2.0).margin(1e-6));
}

TEST_CASE("inception score rejects rows that are not distributions", "[metrics]") {
  Eigen::MatrixXd bad(1, 2);
  bad << 0.5, 0.6;
  CHECK_THROWS_AS(mgan::inception_score(bad), mgan::NumericError);
  CHECK_THROWS_AS(mgan::inception_score(Eigen::MatrixXd(0, 3)), mgan::NumericError);
}

TEST_CASE("inception score stays within [1, C]", "[metrics][property]") {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const int c = 2 + static_cast<int>(mgan::uniform_index(rng, 9));
    const int n = 1 + static_cast<int>(mgan::uniform_index(rng, 40));
    const double is = mgan::inception_score(random_posteriors(n, c, rng));
    REQUIRE(is >= 1.0);
    REQUIRE(is <= c);
  }
}

TEST_CASE("frechet distance is symmetric and non-negative", "[metrics][property]") {
  Rng rng(4);
  for (int t = 0; t < 1000; ++t) {
    const int n = 1 + static_cast<int>(mgan::uniform_index(rng, 8));
    GaussianStats a{Eigen::VectorXd::Random(n), random_spd(n, rng)};
    GaussianStats b{Eigen::VectorXd::Random(n), random_spd(n, rng)};
    const double ab = mgan::frechet_distance(a, b), ba = mgan::frechet_distance(b, a);
    REQUIRE(std::abs(ab - ba) <= 1e-8);
    REQUIRE(ab >= 0);
  }
}

TEST_CASE("fid of a feature set against itself vanishes", "[metrics][property]") {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    const int f = 1 + static_cast<int>(mgan::uniform_index(rng, 12));
    const int n = 2 + static_cast<int>(mgan::uniform_index(rng, 30));
    Eigen::MatrixXd x(n, f);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < f; ++j) x(i, j) = 3 * mgan::standard_normal(rng);
    REQUIRE(mgan::fid_from_features(x, x) <= 1e-6);
  }
}

TEST_CASE("SPD square root matches a Jacobi eigendecomposition oracle", "[metrics][oracle]") {
  Rng rng(6);
  for (int n : {1, 2, 3, 5, 8, 16, 32, 64}) {
    const auto a = random_spd(n, rng);
    const auto mine = mgan::sqrtm_psd(a);
    const auto ref = oracle::sqrt_spd(to_rows(a));
    double worst = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) worst = std::max(worst, std::abs(mine(i, j) - ref[i][j]));
    INFO("dimension " << n);
    CHECK(worst <= 1e-6);
    CHECK((mine * mine - a).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, a.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("frechet distance matches the Jacobi oracle", "[metrics][oracle]") {
  Rng rng(7);
  for (int n : {2, 4, 9, 16}) {
    GaussianStats a{Eigen::VectorXd::Random(n), random_spd(n, rng)};
    GaussianStats b{Eigen::VectorXd::Random(n), random_spd(n, rng)};
    std::vector<double> ma(a.mean.data(), a.mean.data() + n), mb(b.mean.data(), b.mean.data() + n);
    CHECK(mgan::frechet_distance(a, b) ==
          Catch::Approx(oracle::frechet(ma, to_rows(a.covariance), mb, to_rows(b.covariance))).margin(1e-8));
  }
}

TEST_CASE("frechet distance rejects non-symmetric covariances and mismatched dimensions", "[metrics]") {
  GaussianStats a = stats_1d(0, 1);
  GaussianStats b;
  b.mean = Eigen::VectorXd::Zero(2);
  b.covariance = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(mgan::frechet_distance(a, b), mgan::ShapeError);
  GaussianStats c = b;
  c.covariance(0, 1) = 0.5;
  CHECK_THROWS_AS(mgan::frechet_distance(b, c), mgan::NumericError);
}

TEST_CASE("gaussian_stats uses the unbiased covariance", "[metrics]") {
  Eigen::MatrixXd x(3, 1);
  x << 1, 2, 3;
  const auto s = mgan::gaussian_stats(x);
  CHECK(s.mean(0) == Catch::Approx(2.0));
  CHECK(s.covariance(0, 0) == Catch::Approx(1.0));
}
