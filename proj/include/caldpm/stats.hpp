#pragma once

#include <cmath>

#include <Eigen/Core>

namespace caldpm {

/// Monte Carlo scalar with its standard error.
struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

/// Monte Carlo vector mean. `se` is the root of the summed per-coordinate
/// variances of the mean, so E||mean - truth||^2 = se^2.
struct VectorEstimate {
  Eigen::VectorXd mean;
  double se = 0.0;
};

/// Column mean of `values` (one sample per column), accumulated left to right.
inline VectorEstimate column_mean(const Eigen::Ref<const Eigen::MatrixXd>& values) {
  const Eigen::Index n = values.cols();
  VectorEstimate out;
  out.mean = values.rowwise().sum() / static_cast<double>(n);
  if (n > 1) {
    const double ss = (values.colwise() - out.mean).squaredNorm();
    out.se = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  }
  return out;
}

inline Estimate scalar_mean(const Eigen::Ref<const Eigen::VectorXd>& values) {
  const Eigen::Index n = values.size();
  Estimate out;
  out.value = values.mean();
  if (n > 1)
    out.se = std::sqrt((values.array() - out.value).square().sum() / static_cast<double>(n - 1) /
                       static_cast<double>(n));
  return out;
}

}  // namespace caldpm
