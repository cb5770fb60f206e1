#include "caldpm/sample.hpp"

#include <algorithm>
#include <cmath>

#include "caldpm/parallel.hpp"
#include "caldpm/parametrize.hpp"

namespace caldpm {

std::string_view to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::sde_euler: return "sde-euler";
    case SamplerKind::ode_euler: return "ode-euler";
    case SamplerKind::ode_heun: return "ode-heun";
    case SamplerKind::ode_rk4: return "ode-rk4";
    case SamplerKind::dpm_solver: return "dpm-solver";
  }
  return "?";
}

SamplerKind parse_sampler_kind(std::string_view name) {
  for (auto k : {SamplerKind::sde_euler, SamplerKind::ode_euler, SamplerKind::ode_heun, SamplerKind::ode_rk4,
                 SamplerKind::dpm_solver})
    if (name == to_string(k)) return k;
  throw ArgumentError("unknown sampler '" + std::string(name) + "'");
}

void SamplerConfig::validate() const {
  if (kind == SamplerKind::dpm_solver) {
    if (order < 1 || order > 3) throw ArgumentError("dpm-solver order must be 1, 2 or 3");
  } else if (order != 1) {
    throw ArgumentError("order is only valid for dpm-solver");
  }
  if (nfe < 0) throw ArgumentError("nfe must be nonnegative");
  if (nfe > 0 && nfe < evals_per_step()) throw ArgumentError("nfe is smaller than one step's evaluations");
  if (!(noise_scale >= 0)) throw ArgumentError("noise_scale must be nonnegative");
}

int SamplerConfig::evals_per_step() const {
  switch (kind) {
    case SamplerKind::ode_heun: return 2;
    case SamplerKind::ode_rk4: return 4;
    case SamplerKind::dpm_solver: return order;
    default: return 1;
  }
}

Spacing SamplerConfig::grid_spacing() const {
  return spacing.value_or(kind == SamplerKind::dpm_solver ? Spacing::uniform_log_snr : Spacing::uniform_t);
}

TimeGrid sampler_grid(const NoiseSchedule& schedule, const SamplerConfig& config) {
  config.validate();
  if (config.steps() == 0) return TimeGrid{{schedule.horizon()}, config.grid_spacing()};
  return make_time_grid(schedule, config.steps(), config.grid_spacing(),
                        config.t_end.value_or(end_time_for(config.nfe)));
}

namespace {

// Intermediate times of one dpm-solver step at logSNR fractions r of h.
double dpm_time(const NoiseSchedule& schedule, double s, double t, double r) {
  const double ls = schedule.log_snr(s);
  return schedule.time_from_log_snr(ls + r * (schedule.log_snr(t) - ls));
}

std::vector<double> step_eval_times(const NoiseSchedule& schedule, const SamplerConfig& c, double s, double t) {
  switch (c.kind) {
    case SamplerKind::ode_heun: return {s, t};
    case SamplerKind::ode_rk4: return {s, s + 0.5 * (t - s), t};
    case SamplerKind::dpm_solver:
      if (c.order == 2) return {s, dpm_time(schedule, s, t, 0.5)};
      if (c.order == 3) return {s, dpm_time(schedule, s, t, 1.0 / 3), dpm_time(schedule, s, t, 2.0 / 3)};
      return {s};
    default: return {s};
  }
}

}  // namespace

std::vector<double> evaluation_times(const NoiseSchedule& schedule, const SamplerConfig& config) {
  const TimeGrid grid = sampler_grid(schedule, config);
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < grid.times.size(); ++i)
    for (double t : step_eval_times(schedule, config, grid.times[i], grid.times[i + 1])) out.push_back(t);
  std::sort(out.begin(), out.end(), std::greater<>());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Eigen::MatrixXd prior_draws(const NoiseSchedule& schedule, Eigen::Index dim, Eigen::Index n, Seed seed) {
  Eigen::MatrixXd x(dim, n);
  parallel::for_chunks(n, [&](Eigen::Index c, Eigen::Index begin, Eigen::Index end) {
    Rng rng = seed.child("prior").child(c).engine();
    fill_normal(rng, x.middleCols(begin, end - begin));
  });
  return schedule.prior_std() * x;
}

namespace {

class Stepper {
 public:
  Stepper(const Model& model, const NoiseSchedule& schedule, const SamplerConfig& config)
      : model_(model), schedule_(schedule), config_(config) {}

  // Advances x from grid time s to t < s; rng only used by the SDE.
  Eigen::MatrixXd step(const Eigen::MatrixXd& x, double s, double t, Rng& rng) const {
    const double h = t - s;
    switch (config_.kind) {
      case SamplerKind::sde_euler: {
        const auto fg = drift_diffusion(schedule_, s);
        const Eigen::MatrixXd score = eval_as(model_, Parametrization::score, x, s, schedule_);
        const Eigen::MatrixXd z = standard_normal(rng, x.rows(), x.cols());
        return x + h * (fg.drift * x - fg.diffusion2 * score) +
               config_.noise_scale * std::sqrt(fg.diffusion2 * -h) * z;
      }
      case SamplerKind::ode_euler: return x + h * velocity(x, s);
      case SamplerKind::ode_heun: {
        const Eigen::MatrixXd k1 = velocity(x, s);
        const Eigen::MatrixXd k2 = velocity(x + h * k1, t);
        return x + 0.5 * h * (k1 + k2);
      }
      case SamplerKind::ode_rk4: {
        const double mid = s + 0.5 * h;
        const Eigen::MatrixXd k1 = velocity(x, s);
        const Eigen::MatrixXd k2 = velocity(x + 0.5 * h * k1, mid);
        const Eigen::MatrixXd k3 = velocity(x + 0.5 * h * k2, mid);
        const Eigen::MatrixXd k4 = velocity(x + h * k3, t);
        return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
      }
      case SamplerKind::dpm_solver: return dpm_step(x, s, t);
    }
    return x;
  }

 private:
  // Probability-flow ODE field f x - g^2 s / 2.
  Eigen::MatrixXd velocity(const Eigen::MatrixXd& x, double t) const {
    const auto fg = drift_diffusion(schedule_, t);
    return fg.drift * x - 0.5 * fg.diffusion2 * eval_as(model_, Parametrization::score, x, t, schedule_);
  }

  Eigen::MatrixXd eps(const Eigen::MatrixXd& x, double t) const {
    return eval_as(model_, Parametrization::noise, x, t, schedule_);
  }

  Eigen::MatrixXd dpm_step(const Eigen::MatrixXd& x, double s, double t) const {
    const NoiseSchedule& sc = schedule_;
    const double ls = sc.log_snr(s), h = sc.log_snr(t) - ls;
    const double sigma_t = sc.sigma(t);
    if (!(sigma_t > 0) || !(sc.sigma(s) > 0)) throw SingularTimeError("dpm-solver step at sigma = 0");
    const Eigen::MatrixXd e_s = eps(x, s);
    const double phi = std::expm1(h);

    if (config_.order == 1) return sc.alpha(t) / sc.alpha(s) * x - sigma_t * phi * e_s;

    if (config_.order == 2) {
      const double s1 = dpm_time(sc, s, t, 0.5);
      const Eigen::MatrixXd u = sc.alpha(s1) / sc.alpha(s) * x - sc.sigma(s1) * std::expm1(0.5 * h) * e_s;
      return sc.alpha(t) / sc.alpha(s) * x - sigma_t * phi * eps(u, s1);
    }

    const double r1 = 1.0 / 3, r2 = 2.0 / 3;
    const double s1 = dpm_time(sc, s, t, r1), s2 = dpm_time(sc, s, t, r2);
    const Eigen::MatrixXd u1 = sc.alpha(s1) / sc.alpha(s) * x - sc.sigma(s1) * std::expm1(r1 * h) * e_s;
    const Eigen::MatrixXd d1 = eps(u1, s1) - e_s;
    const Eigen::MatrixXd u2 = sc.alpha(s2) / sc.alpha(s) * x - sc.sigma(s2) * std::expm1(r2 * h) * e_s -
                               sc.sigma(s2) * r2 / r1 * (std::expm1(r2 * h) / (r2 * h) - 1) * d1;
    const Eigen::MatrixXd d2 = eps(u2, s2) - e_s;
    return sc.alpha(t) / sc.alpha(s) * x - sigma_t * phi * e_s - sigma_t / r2 * (phi / h - 1) * d2;
  }

  const Model& model_;
  const NoiseSchedule& schedule_;
  const SamplerConfig& config_;
};

}  // namespace

Trajectory sample_from(const Model& model, const NoiseSchedule& schedule, const SamplerConfig& config,
                       const Eigen::MatrixXd& x_T, bool keep_states) {
  if (x_T.rows() != model.dim()) throw ArgumentError("initial state has the wrong dimension");
  const TimeGrid grid = sampler_grid(schedule, config);
  const std::size_t steps = grid.steps();

  Trajectory traj;
  traj.times = grid.times;
  traj.evaluations = static_cast<long>(steps) * config.evals_per_step();
  traj.states.assign(keep_states ? steps + 1 : 1, Eigen::MatrixXd(x_T.rows(), x_T.cols()));
  if (keep_states) traj.states.front() = x_T;

  const Stepper stepper(model, schedule, config);
  parallel::for_chunks(x_T.cols(), [&](Eigen::Index c, Eigen::Index begin, Eigen::Index end) {
    Rng rng = config.seed.child("sde").child(c).engine();
    Eigen::MatrixXd x = x_T.middleCols(begin, end - begin);
    for (std::size_t i = 0; i < steps; ++i) {
      x = stepper.step(x, grid.times[i], grid.times[i + 1], rng);
      if (!x.allFinite()) throw DivergenceError(static_cast<long>(i), "non-finite sampler state");
      if (keep_states) traj.states[i + 1].middleCols(begin, end - begin) = x;
    }
    if (!keep_states) traj.states.back().middleCols(begin, end - begin) = x;
  });
  return traj;
}

Trajectory sample(const Model& model, const NoiseSchedule& schedule, const SamplerConfig& config, Eigen::Index n,
                  bool keep_states) {
  if (n < 1) throw ArgumentError("sample needs n >= 1");
  return sample_from(model, schedule, config, prior_draws(schedule, model.dim(), n, config.seed), keep_states);
}

}  // namespace caldpm
