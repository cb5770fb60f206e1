#pragma once

#include <memory>
#include <optional>

#include <Eigen/Core>

#include "caldpm/mixture.hpp"
#include "caldpm/rng.hpp"
#include "caldpm/schedule.hpp"

namespace caldpm {

/// Where clean points x_0 come from: the exact mixture, or a fixed finite
/// dataset (training subset or sampler output) that is cycled in order.
class DataSource {
 public:
  static DataSource from_mixture(GaussianMixture mixture);
  /// Labels may be empty for unlabeled data (e.g. generated samples).
  static DataSource from_points(Eigen::MatrixXd points, Eigen::VectorXi labels = {});

  Eigen::Index dim() const;
  bool labeled() const;
  /// Null for dataset sources.
  const GaussianMixture* mixture() const { return mixture_ ? &*mixture_ : nullptr; }
  /// Number of stored points; 0 for a mixture source.
  Eigen::Index size() const { return points_.cols(); }

  /// n clean points. Mixture: fresh i.i.d. draws. Dataset: point j mod N.
  LabeledPoints draw(Eigen::Index n, Seed seed) const;
  /// n points drawn with replacement (dataset) or i.i.d. (mixture); used for minibatches.
  LabeledPoints sample(Eigen::Index n, Rng& rng) const;

 private:
  std::optional<GaussianMixture> mixture_;
  Eigen::MatrixXd points_;
  Eigen::VectorXi labels_;
};

/// Joint draws (x_0, eps, x_t = alpha_t x_0 + sigma_t eps) at one time.
struct ForwardDraws {
  double t = 0;
  Eigen::MatrixXd x0;
  Eigen::MatrixXd noise;
  Eigen::MatrixXd xt;
  Eigen::VectorXi labels;  // empty when the source is unlabeled
};

/// Clean points come from seed.child("x0"); noise from seed.at_time(t), so two
/// calls with equal (seed, t, n) reproduce the same draws.
///
/// With `antithetic`, columns come in pairs (x_0, eps), (x_0, -eps) and n must be even.
ForwardDraws draw_forward(const DataSource& source, const NoiseSchedule& schedule, double t, Eigen::Index n,
                          Seed seed, bool antithetic = false);

}  // namespace caldpm
