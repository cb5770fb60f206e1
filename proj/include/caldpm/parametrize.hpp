#pragma once

#include <optional>
#include <string_view>

#include <Eigen/Core>

#include "caldpm/schedule.hpp"

namespace caldpm {

/// What a model predicts at (x_t, t): the score, the noise eps, the clean
/// point x_0, or the velocity v = alpha_t eps - sigma_t x_0.
enum class Parametrization { score, noise, data, velocity };

std::string_view to_string(Parametrization p);
Parametrization parse_parametrization(std::string_view name);

namespace detail {

template <typename Scalar>
AlphaSigma<Scalar> nonsingular(const BasicSchedule<Scalar>& schedule, Scalar t) {
  const auto as = alpha_sigma(schedule, t);
  if (!(as.sigma > 0)) throw SingularTimeError("sigma_t = 0 at t = " + std::to_string(static_cast<double>(t)));
  return as;
}

}  // namespace detail

/// Re-expresses a batch of model outputs (k x n, columns aligned with x) in
/// another parametrization. Everything routes through the noise form:
///   s = -eps / sigma,  x0 = (x - sigma eps) / alpha,  v = alpha eps - sigma x0.
template <typename DerivedOut, typename DerivedX, typename Scalar>
typename DerivedOut::PlainObject convert(const Eigen::MatrixBase<DerivedOut>& out, Parametrization from,
                                         Parametrization to, const Eigen::MatrixBase<DerivedX>& x, Scalar t,
                                         const BasicSchedule<Scalar>& schedule) {
  using Plain = typename DerivedOut::PlainObject;
  if (from == to) return out;
  const auto [a, s] = detail::nonsingular(schedule, t);

  Plain eps;
  switch (from) {
    case Parametrization::score: eps = -s * out; break;
    case Parametrization::noise: eps = out; break;
    case Parametrization::data: eps = (x - a * out) / s; break;
    case Parametrization::velocity: eps = (a * out + s * x) / (a * a + s * s); break;
  }
  switch (to) {
    case Parametrization::score: return -eps / s;
    case Parametrization::noise: return eps;
    case Parametrization::data: return (x - s * eps) / a;
    case Parametrization::velocity: return a * eps - s * ((x - s * eps) / a);
  }
  return eps;
}

/// Conversion of an x-independent offset (a calibration term): the linear part
/// of convert, i.e. convert at x = 0.
template <typename Derived, typename Scalar>
typename Derived::PlainObject convert_offset(const Eigen::MatrixBase<Derived>& eta, Parametrization from,
                                             Parametrization to, Scalar t, const BasicSchedule<Scalar>& schedule) {
  return convert(eta, from, to, Derived::PlainObject::Zero(eta.rows(), eta.cols()), t, schedule);
}

/// eta_t for one timestep, tagged with the parametrization it was estimated under.
struct CalibrationTerm {
  double t = 0;
  Eigen::VectorXd value;
  Parametrization param = Parametrization::noise;
  std::optional<int> label;
};

/// eta* from the mean model output: identity for score/noise, minus E[x_0] for
/// data, plus sigma_t E[x_0] for velocity. mean_x0 is required for the latter two.
CalibrationTerm optimal_calibration(Parametrization param, const Eigen::VectorXd& mean_output,
                                    const std::optional<Eigen::VectorXd>& mean_x0, double t,
                                    const NoiseSchedule& schedule);

/// Weight w_t with J_DSM^t = w_t E||model - target||^2 in the given parametrization.
/// sigma_t is clamped at sigma(t_min).
double dsm_weight(Parametrization param, double t, const NoiseSchedule& schedule);

/// Per-column DSM regression target for (x_0, eps) pairs.
Eigen::MatrixXd dsm_target(Parametrization param, const Eigen::MatrixXd& x0, const Eigen::MatrixXd& noise, double t,
                           const NoiseSchedule& schedule);

/// Reduction of the SM/DSM objective from subtracting eta: dsm_weight * ||eta||^2.
double objective_gap(Parametrization param, const Eigen::VectorXd& eta, double t, const NoiseSchedule& schedule);

inline double objective_gap(const CalibrationTerm& term, const NoiseSchedule& schedule) {
  return objective_gap(term.param, term.value, term.t, schedule);
}

}  // namespace caldpm
