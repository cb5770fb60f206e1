#include "caldpm/mixture.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "caldpm/parallel.hpp"

namespace caldpm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Symmetric square root factor S with S S^T = cov, tolerant of semi-definite input.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov) {
  const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

Eigen::MatrixXd log_softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double m = logits.col(j).maxCoeff();
    const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
    out.col(j) = logits.col(j).array() - lse;
  }
  return out;
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<Component> components) : components_(std::move(components)) {
  if (components_.empty()) throw ArgumentError("mixture needs at least one component");
  dim_ = components_.front().mean.size();
  if (dim_ < 1) throw ArgumentError("mixture dimension must be positive");
  double total = 0;
  for (const auto& c : components_) {
    if (c.mean.size() != dim_ || c.cov.rows() != dim_ || c.cov.cols() != dim_)
      throw ArgumentError("mixture component shapes disagree");
    if (!(c.weight >= 0) || !std::isfinite(c.weight)) throw ArgumentError("mixture weights must be nonnegative");
    if (!c.cov.isApprox(c.cov.transpose(), 1e-12)) throw NumericError("component covariance is not symmetric");
    if (Eigen::LLT<Eigen::MatrixXd>(c.cov).info() != Eigen::Success)
      throw NumericError("component covariance is not positive definite");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ArgumentError("mixture weights must sum to 1");
}

GaussianMixture GaussianMixture::standard_normal(Eigen::Index dim) {
  return gaussian(Eigen::VectorXd::Zero(dim), Eigen::MatrixXd::Identity(dim, dim));
}

GaussianMixture GaussianMixture::gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
  return GaussianMixture({Component{1.0, std::move(mean), std::move(cov)}});
}

Eigen::VectorXd GaussianMixture::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(dim_);
  for (const auto& c : components_) m += c.weight * c.mean;
  return m;
}

void GaussianMixture::check_label(int y) const {
  if (y < 0 || y >= size()) throw ArgumentError("label " + std::to_string(y) + " is not a mixture component");
}

MarginalMixture::MarginalMixture(const GaussianMixture& mixture, const NoiseSchedule& schedule, double t)
    : dim_(mixture.dim()) {
  const double alpha = schedule.alpha(t);
  const double sigma2 = schedule.sigma2(t);
  parts_.reserve(mixture.size());
  for (const auto& c : mixture.components()) {
    Part p;
    p.log_weight = c.weight > 0 ? std::log(c.weight) : -std::numeric_limits<double>::infinity();
    p.mean = alpha * c.mean;
    p.cov = alpha * alpha * c.cov;
    p.cov.diagonal().array() += sigma2;
    p.llt.compute(p.cov);
    if (p.llt.info() != Eigen::Success) throw NumericError("marginal covariance is not positive definite");
    const double log_det = 2.0 * p.llt.matrixLLT().diagonal().array().log().sum();
    p.log_norm = -0.5 * static_cast<double>(dim_) * kLog2Pi - 0.5 * log_det;
    parts_.push_back(std::move(p));
  }
}

Eigen::MatrixXd MarginalMixture::log_joint(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out(size(), x.cols());
  for (int i = 0; i < size(); ++i) {
    const Part& p = parts_[i];
    const Eigen::MatrixXd white = p.llt.matrixL().solve(x.colwise() - p.mean);
    out.row(i) = (p.log_weight + p.log_norm - 0.5 * white.colwise().squaredNorm().array()).matrix();
  }
  return out;
}

Eigen::VectorXd MarginalMixture::log_density(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd lj = log_joint(x);
  Eigen::VectorXd out(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double m = lj.col(j).maxCoeff();
    out(j) = m + std::log((lj.col(j).array() - m).exp().sum());
  }
  return out;
}

Eigen::MatrixXd MarginalMixture::responsibilities(const Eigen::MatrixXd& x) const {
  return log_softmax_columns(log_joint(x)).array().exp().matrix();
}

Eigen::MatrixXd MarginalMixture::component_score(const Eigen::MatrixXd& x, int i) const {
  return -parts_[i].llt.solve(x.colwise() - parts_[i].mean);
}

Eigen::MatrixXd MarginalMixture::score(const Eigen::MatrixXd& x) const {
  if (size() == 1) return component_score(x, 0);
  const Eigen::MatrixXd gamma = responsibilities(x);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim_, x.cols());
  for (int i = 0; i < size(); ++i) out += component_score(x, i) * gamma.row(i).asDiagonal();
  return out;
}

LabeledPoints sample_data(const GaussianMixture& mixture, Eigen::Index n, Seed seed) {
  if (n < 1) throw ArgumentError("sample_data needs n >= 1");
  std::vector<double> weights;
  std::vector<Eigen::MatrixXd> factors;
  for (const auto& c : mixture.components()) {
    weights.push_back(c.weight);
    factors.push_back(psd_factor(c.cov));
  }
  LabeledPoints out{Eigen::MatrixXd(mixture.dim(), n), Eigen::VectorXi(n)};
  parallel::for_chunks(n, [&](Eigen::Index c, Eigen::Index begin, Eigen::Index end) {
    Rng rng = seed.child(c).engine();
    std::discrete_distribution<int> pick(weights.begin(), weights.end());
    Eigen::VectorXd z(mixture.dim());
    for (Eigen::Index j = begin; j < end; ++j) {
      const int y = pick(rng);
      fill_normal(rng, z);
      out.labels(j) = y;
      out.points.col(j) = mixture[y].mean + factors[y] * z;
    }
  });
  return out;
}

Eigen::MatrixXd score(const GaussianMixture& mixture, const NoiseSchedule& schedule, const Eigen::MatrixXd& x,
                      double t) {
  return MarginalMixture(mixture, schedule, t).score(x);
}

Eigen::VectorXd log_density(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                            const Eigen::MatrixXd& x, double t) {
  return MarginalMixture(mixture, schedule, t).log_density(x);
}

Eigen::MatrixXd conditional_score(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                  const Eigen::MatrixXd& x, double t, int y) {
  mixture.check_label(y);
  return MarginalMixture(mixture, schedule, t).component_score(x, y);
}

namespace {

// Per-component Gaussian conditioning of x_s on x_t.
struct PosteriorPart {
  Eigen::VectorXd mean_s;     // alpha_s mu
  Eigen::VectorXd mean_t;     // alpha_t mu
  Eigen::MatrixXd gain;       // alpha_ts C_s C_t^{-1}
  Eigen::MatrixXd cov_factor; // factor of C_s - alpha_ts gain C_s
};

std::vector<PosteriorPart> posterior_parts(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                           double s, double t, const MarginalMixture& at_t) {
  const auto tr = transition(schedule, s, t);
  const MarginalMixture at_s(mixture, schedule, s);
  std::vector<PosteriorPart> parts;
  for (int i = 0; i < mixture.size(); ++i) {
    PosteriorPart p;
    p.mean_s = at_s.mean(i);
    p.mean_t = at_t.mean(i);
    p.gain = tr.alpha_ts * at_t.factor(i).solve(at_s.cov(i)).transpose();
    p.cov_factor = psd_factor(at_s.cov(i) - tr.alpha_ts * p.gain * at_s.cov(i));
    parts.push_back(std::move(p));
  }
  return parts;
}

void check_posterior_times(double s, double t) {
  if (!(s < t)) throw OrderingError("posterior draw requires s < t");
}

}  // namespace

Eigen::MatrixXd posterior_sample(const GaussianMixture& mixture, const NoiseSchedule& schedule, double s,
                                 double t, const Eigen::MatrixXd& x_t, Rng& rng) {
  check_posterior_times(s, t);
  const MarginalMixture at_t(mixture, schedule, t);
  const auto parts = posterior_parts(mixture, schedule, s, t, at_t);
  const Eigen::MatrixXd gamma = at_t.responsibilities(x_t);

  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Eigen::MatrixXd out(x_t.rows(), x_t.cols());
  Eigen::VectorXd z(x_t.rows());
  for (Eigen::Index j = 0; j < x_t.cols(); ++j) {
    const double u = uniform(rng);
    int i = 0;
    for (double acc = gamma(0, j); i + 1 < mixture.size() && u >= acc; acc += gamma(++i, j)) {
    }
    fill_normal(rng, z);
    const PosteriorPart& p = parts[i];
    out.col(j) = p.mean_s + p.gain * (x_t.col(j) - p.mean_t) + p.cov_factor * z;
  }
  return out;
}

Eigen::MatrixXd posterior_mean(const GaussianMixture& mixture, const NoiseSchedule& schedule, double s, double t,
                               const Eigen::MatrixXd& x_t) {
  check_posterior_times(s, t);
  const MarginalMixture at_t(mixture, schedule, t);
  const auto parts = posterior_parts(mixture, schedule, s, t, at_t);
  const Eigen::MatrixXd gamma = at_t.responsibilities(x_t);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x_t.rows(), x_t.cols());
  for (int i = 0; i < mixture.size(); ++i) {
    const Eigen::MatrixXd m = (parts[i].gain * (x_t.colwise() - parts[i].mean_t)).colwise() + parts[i].mean_s;
    out += m * gamma.row(i).asDiagonal();
  }
  return out;
}

Eigen::MatrixXd tweedie_denoise(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                const Eigen::MatrixXd& x, double t) {
  const double alpha = schedule.alpha(t);
  const double sigma2 = schedule.sigma2(t);
  return (x + sigma2 * score(mixture, schedule, x, t)) / alpha;
}

Eigen::MatrixXd tweedie_denoise_direct(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                       const Eigen::MatrixXd& x, double t) {
  // x_0 | x_t, i ~ Gaussian with mean mu_i + alpha_t Sigma_i C_i^{-1} (x_t - alpha_t mu_i).
  const double alpha = schedule.alpha(t);
  const MarginalMixture at_t(mixture, schedule, t);
  const Eigen::MatrixXd gamma = at_t.responsibilities(x);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (int i = 0; i < mixture.size(); ++i) {
    const Component& c = mixture[i];
    const Eigen::MatrixXd m = (alpha * c.cov * at_t.factor(i).solve(x.colwise() - at_t.mean(i))).colwise() + c.mean;
    out += m * gamma.row(i).asDiagonal();
  }
  return out;
}

double log_prior_density(const NoiseSchedule& schedule, const Eigen::VectorXd& x) {
  const double var = schedule.prior_std() * schedule.prior_std();
  const double k = static_cast<double>(x.size());
  return -0.5 * k * (kLog2Pi + std::log(var)) - 0.5 * x.squaredNorm() / var;
}

Estimate kl_to_prior(const GaussianMixture& mixture, const NoiseSchedule& schedule, Eigen::Index n, Seed seed) {
  if (n < 1) throw ArgumentError("kl_to_prior needs n >= 1");
  const double T = schedule.horizon();
  const double alpha = schedule.alpha(T), sigma = schedule.sigma(T);
  const MarginalMixture at_T(mixture, schedule, T);
  const LabeledPoints clean = sample_data(mixture, n, seed.child("data"));
  Eigen::VectorXd ratio(n);
  parallel::for_chunks(n, [&](Eigen::Index c, Eigen::Index begin, Eigen::Index end) {
    Rng rng = seed.child("noise").child(c).engine();
    const Eigen::MatrixXd x =
        alpha * clean.points.middleCols(begin, end - begin) + sigma * standard_normal(rng, mixture.dim(), end - begin);
    const Eigen::VectorXd lq = at_T.log_density(x);
    for (Eigen::Index j = 0; j < x.cols(); ++j) ratio(begin + j) = lq(j) - log_prior_density(schedule, x.col(j));
  });
  return scalar_mean(ratio);
}

}  // namespace caldpm
