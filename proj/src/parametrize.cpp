#include "caldpm/parametrize.hpp"

#include <algorithm>

namespace caldpm {

std::string_view to_string(Parametrization p) {
  switch (p) {
    case Parametrization::score: return "score";
    case Parametrization::noise: return "noise";
    case Parametrization::data: return "data";
    case Parametrization::velocity: return "velocity";
  }
  return "?";
}

Parametrization parse_parametrization(std::string_view name) {
  for (auto p : {Parametrization::score, Parametrization::noise, Parametrization::data, Parametrization::velocity})
    if (name == to_string(p)) return p;
  throw ArgumentError("unknown parametrization '" + std::string(name) + "'");
}

CalibrationTerm optimal_calibration(Parametrization param, const Eigen::VectorXd& mean_output,
                                    const std::optional<Eigen::VectorXd>& mean_x0, double t,
                                    const NoiseSchedule& schedule) {
  CalibrationTerm term{t, mean_output, param, std::nullopt};
  if (param == Parametrization::data || param == Parametrization::velocity) {
    if (!mean_x0) throw ArgumentError("data and velocity calibration need E[x_0]");
    if (mean_x0->size() != mean_output.size()) throw ArgumentError("E[x_0] has the wrong dimension");
    if (param == Parametrization::data)
      term.value -= *mean_x0;
    else
      term.value += schedule.sigma(t) * *mean_x0;
  }
  return term;
}

double dsm_weight(Parametrization param, double t, const NoiseSchedule& schedule) {
  if (param == Parametrization::score) return 0.5;
  const double sigma_raw = schedule.sigma(t);
  if (!(sigma_raw > 0)) throw SingularTimeError("sigma_t = 0 at t = " + std::to_string(t));
  const double s2 = std::max(schedule.sigma2(t), schedule.sigma2(schedule.t_min()));
  const double a2 = schedule.alpha(t) * schedule.alpha(t);
  switch (param) {
    case Parametrization::data: return a2 / (2 * s2 * s2);
    case Parametrization::noise: return 1 / (2 * s2);
    case Parametrization::velocity: return a2 / (2 * s2);
    default: return 0.5;
  }
}

Eigen::MatrixXd dsm_target(Parametrization param, const Eigen::MatrixXd& x0, const Eigen::MatrixXd& noise, double t,
                           const NoiseSchedule& schedule) {
  switch (param) {
    case Parametrization::score: {
      const double sigma = schedule.sigma(t);
      if (!(sigma > 0)) throw SingularTimeError("score target undefined at sigma_t = 0");
      return -noise / sigma;
    }
    case Parametrization::noise: return noise;
    case Parametrization::data: return x0;
    case Parametrization::velocity: return schedule.alpha(t) * noise - schedule.sigma(t) * x0;
  }
  return noise;
}

double objective_gap(Parametrization param, const Eigen::VectorXd& eta, double t, const NoiseSchedule& schedule) {
  if (!eta.allFinite()) throw NumericError("calibration term is not finite");
  return dsm_weight(param, t, schedule) * eta.squaredNorm();
}

}  // namespace caldpm
