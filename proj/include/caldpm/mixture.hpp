#pragma once

#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "caldpm/rng.hpp"
#include "caldpm/schedule.hpp"
#include "caldpm/stats.hpp"

namespace caldpm {

// Convention: a batch of points is a k x n matrix, one point per column.

struct Component {
  double weight = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // symmetric positive definite
};

/// Exact data distribution q_0: a full-covariance Gaussian mixture. The
/// component index doubles as the conditioning label y.
class GaussianMixture {
 public:
  explicit GaussianMixture(std::vector<Component> components);

  static GaussianMixture standard_normal(Eigen::Index dim);
  static GaussianMixture gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov);

  Eigen::Index dim() const { return dim_; }
  int size() const { return static_cast<int>(components_.size()); }
  const Component& operator[](int i) const { return components_[i]; }
  const std::vector<Component>& components() const { return components_; }

  /// E[x_0].
  Eigen::VectorXd mean() const;

  void check_label(int y) const;

 private:
  Eigen::Index dim_;
  std::vector<Component> components_;
};

/// q_t written as a mixture: component i is N(alpha_t mu_i, alpha_t^2 Sigma_i + sigma_t^2 I)
/// with its weight unchanged. Factorizations are computed once per time.
class MarginalMixture {
 public:
  MarginalMixture(const GaussianMixture& mixture, const NoiseSchedule& schedule, double t);

  Eigen::Index dim() const { return dim_; }
  int size() const { return static_cast<int>(parts_.size()); }

  const Eigen::VectorXd& mean(int i) const { return parts_[i].mean; }
  const Eigen::MatrixXd& cov(int i) const { return parts_[i].cov; }
  const Eigen::LLT<Eigen::MatrixXd>& factor(int i) const { return parts_[i].llt; }

  /// (size x n) matrix of log w_i + log N_i(x).
  Eigen::MatrixXd log_joint(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd log_density(const Eigen::MatrixXd& x) const;
  /// (size x n) posterior component probabilities, computed in log space.
  Eigen::MatrixXd responsibilities(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd score(const Eigen::MatrixXd& x) const;
  /// Score of component i alone: -C_i^{-1} (x - m_i).
  Eigen::MatrixXd component_score(const Eigen::MatrixXd& x, int i) const;

 private:
  struct Part {
    double log_weight;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    Eigen::LLT<Eigen::MatrixXd> llt;
    double log_norm;  // -k/2 log(2 pi) - 1/2 log det C
  };
  Eigen::Index dim_;
  std::vector<Part> parts_;
};

struct LabeledPoints {
  Eigen::MatrixXd points;  // k x n
  Eigen::VectorXi labels;
};

/// n i.i.d. draws from q_0 with component labels.
LabeledPoints sample_data(const GaussianMixture& mixture, Eigen::Index n, Seed seed);

Eigen::MatrixXd score(const GaussianMixture& mixture, const NoiseSchedule& schedule, const Eigen::MatrixXd& x,
                      double t);
Eigen::VectorXd log_density(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                            const Eigen::MatrixXd& x, double t);
/// grad log q_t(x | y): the score of component y's marginal.
Eigen::MatrixXd conditional_score(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                  const Eigen::MatrixXd& x, double t, int y);

/// Exact ancestral draws x_s ~ q(x_s | x_t), one per column of x_t.
Eigen::MatrixXd posterior_sample(const GaussianMixture& mixture, const NoiseSchedule& schedule, double s,
                                 double t, const Eigen::MatrixXd& x_t, Rng& rng);
/// E[x_s | x_t] in closed form.
Eigen::MatrixXd posterior_mean(const GaussianMixture& mixture, const NoiseSchedule& schedule, double s, double t,
                               const Eigen::MatrixXd& x_t);

/// E[x_0 | x_t] = (x + sigma_t^2 score(x, t)) / alpha_t.
Eigen::MatrixXd tweedie_denoise(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                const Eigen::MatrixXd& x, double t);
/// E[x_0 | x_t] as the responsibility-weighted per-component Gaussian posterior means.
Eigen::MatrixXd tweedie_denoise_direct(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                       const Eigen::MatrixXd& x, double t);

/// Monte Carlo D_KL(q_T || p_T) with p_T = N(0, prior_std^2 I).
Estimate kl_to_prior(const GaussianMixture& mixture, const NoiseSchedule& schedule, Eigen::Index n, Seed seed);

double log_prior_density(const NoiseSchedule& schedule, const Eigen::VectorXd& x);

}  // namespace caldpm
