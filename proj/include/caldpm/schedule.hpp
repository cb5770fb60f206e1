#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "caldpm/errors.hpp"

namespace caldpm {

enum class ScheduleKind { vp_linear, ve_geometric };

std::string_view to_string(ScheduleKind kind);

template <typename Scalar>
struct AlphaSigma {
  Scalar alpha;
  Scalar sigma;
};

template <typename Scalar>
struct DriftDiffusion {
  Scalar drift;       // f(t) = d log(alpha_t) / dt
  Scalar diffusion2;  // g(t)^2 = d sigma_t^2 / dt - 2 f(t) sigma_t^2
};

template <typename Scalar>
struct TransitionCoeffs {
  Scalar alpha_ts;   // alpha_t / alpha_s
  Scalar sigma2_ts;  // sigma_t^2 - alpha_ts^2 sigma_s^2
};

/// Forward noising schedule q(x_t | x_0) = N(alpha_t x_0, sigma_t^2 I) on [0, T].
///
/// VP-linear: beta(t) = beta_min + t (beta_max - beta_min),
///   alpha_t = exp(-t^2 (beta_max - beta_min) / 4 - t beta_min / 2), sigma_t = sqrt(1 - alpha_t^2).
/// VE-geometric: alpha_t = 1, sigma_t = sigma_min (sigma_max / sigma_min)^(t / T).
///
/// Immutable after construction.
template <typename Scalar>
class BasicSchedule {
 public:
  static constexpr double kDefaultTMin = 1e-5;

  static BasicSchedule vp_linear(Scalar beta_min = Scalar(0.1), Scalar beta_max = Scalar(20),
                                 Scalar horizon = Scalar(1)) {
    if (!(beta_min > 0) || !(beta_max >= beta_min)) throw ArgumentError("vp-linear needs 0 < beta_min <= beta_max");
    if (!(horizon > 0)) throw ArgumentError("schedule horizon must be positive");
    return BasicSchedule(ScheduleKind::vp_linear, beta_min, beta_max, horizon, Scalar(1));
  }

  static BasicSchedule ve_geometric(Scalar sigma_min = Scalar(0.01), Scalar sigma_max = Scalar(50),
                                    Scalar horizon = Scalar(1)) {
    if (!(sigma_min > 0) || !(sigma_max > sigma_min))
      throw ArgumentError("ve-geometric needs 0 < sigma_min < sigma_max");
    if (!(horizon > 0)) throw ArgumentError("schedule horizon must be positive");
    return BasicSchedule(ScheduleKind::ve_geometric, sigma_min, sigma_max, horizon, sigma_max);
  }

  ScheduleKind kind() const { return kind_; }
  /// beta_min (VP) or sigma_min (VE).
  Scalar lower() const { return lower_; }
  /// beta_max (VP) or sigma_max (VE).
  Scalar upper() const { return upper_; }
  Scalar horizon() const { return horizon_; }
  /// Standard deviation of the terminal prior p_T = N(0, prior_std^2 I).
  Scalar prior_std() const { return prior_std_; }
  /// Smallest time at which operations dividing by sigma_t are evaluated.
  Scalar t_min() const { return Scalar(kDefaultTMin); }

  void check_time(Scalar t) const {
    if (!(t >= 0 && t <= horizon_))
      throw DomainError("time " + std::to_string(static_cast<double>(t)) + " outside [0, " +
                        std::to_string(static_cast<double>(horizon_)) + "]");
  }

  Scalar log_alpha(Scalar t) const {
    check_time(t);
    if (kind_ == ScheduleKind::ve_geometric) return Scalar(0);
    return -Scalar(0.25) * t * t * (upper_ - lower_) - Scalar(0.5) * t * lower_;
  }

  Scalar alpha(Scalar t) const { return std::exp(log_alpha(t)); }

  Scalar sigma2(Scalar t) const {
    if (kind_ == ScheduleKind::ve_geometric) {
      const Scalar s = sigma(t);
      return s * s;
    }
    return -std::expm1(Scalar(2) * log_alpha(t));
  }

  Scalar sigma(Scalar t) const {
    if (kind_ == ScheduleKind::ve_geometric) {
      check_time(t);
      return lower_ * std::pow(upper_ / lower_, t / horizon_);
    }
    return std::sqrt(sigma2(t));
  }

  Scalar beta(Scalar t) const { return lower_ + t * (upper_ - lower_); }

  /// log-SNR lambda_t = log(alpha_t / sigma_t); strictly decreasing in t.
  Scalar log_snr(Scalar t) const {
    if (kind_ == ScheduleKind::ve_geometric) return -std::log(sigma(t));
    return log_alpha(t) - Scalar(0.5) * std::log(sigma2(t));
  }

  /// Inverse of log_snr, clamped to [0, T].
  Scalar time_from_log_snr(Scalar lambda) const {
    Scalar t;
    if (kind_ == ScheduleKind::ve_geometric) {
      t = horizon_ * (-lambda - std::log(lower_)) / std::log(upper_ / lower_);
    } else {
      // -2 log(alpha_t) = log(1 + exp(-2 lambda)) = (upper - lower) t^2 / 2 + lower t
      const Scalar m = Scalar(-2) * lambda;
      const Scalar ell = std::max(m, Scalar(0)) + std::log1p(std::exp(-std::abs(m)));
      t = Scalar(2) * ell / (lower_ + std::sqrt(lower_ * lower_ + Scalar(2) * (upper_ - lower_) * ell));
    }
    return std::clamp(t, Scalar(0), horizon_);
  }

  friend bool operator==(const BasicSchedule&, const BasicSchedule&) = default;

 private:
  BasicSchedule(ScheduleKind kind, Scalar lower, Scalar upper, Scalar horizon, Scalar prior_std)
      : kind_(kind), lower_(lower), upper_(upper), horizon_(horizon), prior_std_(prior_std) {}

  ScheduleKind kind_;
  Scalar lower_;
  Scalar upper_;
  Scalar horizon_;
  Scalar prior_std_;
};

using NoiseSchedule = BasicSchedule<double>;

template <typename Scalar>
AlphaSigma<Scalar> alpha_sigma(const BasicSchedule<Scalar>& schedule, Scalar t) {
  return {schedule.alpha(t), schedule.sigma(t)};
}

template <typename Scalar>
DriftDiffusion<Scalar> drift_diffusion(const BasicSchedule<Scalar>& schedule, Scalar t) {
  schedule.check_time(t);
  if (schedule.kind() == ScheduleKind::ve_geometric) {
    const Scalar rate = std::log(schedule.upper() / schedule.lower()) / schedule.horizon();
    return {Scalar(0), Scalar(2) * schedule.sigma2(t) * rate};
  }
  const Scalar b = schedule.beta(t);
  return {Scalar(-0.5) * b, b};
}

/// Coefficients of q(x_t | x_s) = N(alpha_ts x_s, sigma2_ts I) for s <= t.
template <typename Scalar>
TransitionCoeffs<Scalar> transition(const BasicSchedule<Scalar>& schedule, Scalar s, Scalar t) {
  schedule.check_time(s);
  schedule.check_time(t);
  if (s > t) throw OrderingError("transition requires s <= t");
  if (s == t) return {Scalar(1), Scalar(0)};
  const Scalar alpha_ts = schedule.alpha(t) / schedule.alpha(s);
  const Scalar sigma2_ts = schedule.sigma2(t) - alpha_ts * alpha_ts * schedule.sigma2(s);
  return {alpha_ts, std::max(sigma2_ts, Scalar(0))};
}

enum class Spacing { uniform_t, uniform_log_snr };

std::string_view to_string(Spacing spacing);
Spacing parse_spacing(std::string_view name);

/// Strictly decreasing times T = t_0 > ... > t_N = t_end.
struct TimeGrid {
  std::vector<double> times;
  Spacing spacing = Spacing::uniform_t;

  std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }
};

/// Sampler end time: 1e-3 below 15 steps, 1e-4 otherwise.
double end_time_for(int steps);

/// Grid with `steps` intervals from T down to t_end (default end_time_for(steps)).
TimeGrid make_time_grid(const NoiseSchedule& schedule, int steps, Spacing spacing,
                        std::optional<double> t_end = std::nullopt);

/// The discrete-timestep view: {i T / count : i = 0..count}, increasing.
std::vector<double> discrete_times(const NoiseSchedule& schedule, int count = 1000);

/// Structured-text descriptor, e.g. "vp-linear beta_min=0.1 beta_max=20 T=1 prior_std=1".
/// Printed with 17 significant digits; parse(to_text(s)) == s exactly.
std::string to_text(const NoiseSchedule& schedule);
NoiseSchedule parse_schedule(std::string_view text);

}  // namespace caldpm
