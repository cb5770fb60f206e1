#pragma once

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "caldpm/mixture.hpp"

namespace testing {

inline caldpm::GaussianMixture three_mixture() {
  Eigen::Matrix2d c0, c1, c2;
  c0 << 0.5, 0.1, 0.1, 0.3;
  c1 << 0.2, 0.0, 0.0, 0.4;
  c2 << 0.3, -0.05, -0.05, 0.2;
  return caldpm::GaussianMixture({{0.5, Eigen::Vector2d(-2, 0), c0},
                                  {0.3, Eigen::Vector2d(2, 1), c1},
                                  {0.2, Eigen::Vector2d(0, -2.5), c2}});
}

inline caldpm::GaussianMixture two_mixture() {
  Eigen::Matrix2d c0, c1;
  c0 << 0.4, 0.15, 0.15, 0.3;
  c1 << 0.25, -0.1, -0.1, 0.5;
  return caldpm::GaussianMixture({{0.6, Eigen::Vector2d(-1.5, 0.5), c0}, {0.4, Eigen::Vector2d(1.5, -0.5), c1}});
}

// 4-D mixture with an anisotropic component.
inline caldpm::GaussianMixture wide_mixture() {
  Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
  a(0, 1) = a(1, 0) = 0.3;
  a(2, 3) = a(3, 2) = -0.2;
  Eigen::Matrix4d b = 0.5 * Eigen::Matrix4d::Identity();
  b(0, 0) = 2.0;
  return caldpm::GaussianMixture({{0.7, Eigen::Vector4d(1, 0, -1, 0.5), a}, {0.3, Eigen::Vector4d(-2, 1, 0, 0), b}});
}

// Direct density of N(m, C) at x.
inline double gauss_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& m, const Eigen::MatrixXd& c) {
  const Eigen::Index k = x.size();
  const Eigen::VectorXd d = x - m;
  return -0.5 * d.dot(c.inverse() * d) - 0.5 * std::log(c.determinant()) - 0.5 * k * std::log(2 * M_PI);
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, unsigned seed, double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * n(gen);
  return m;
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace testing
