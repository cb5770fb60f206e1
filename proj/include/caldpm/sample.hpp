#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "caldpm/model.hpp"
#include "caldpm/rng.hpp"
#include "caldpm/schedule.hpp"

namespace caldpm {

enum class SamplerKind { sde_euler, ode_euler, ode_heun, ode_rk4, dpm_solver };

std::string_view to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(std::string_view name);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::dpm_solver;
  int order = 1;  // dpm-solver only
  /// Model-evaluation budget. 0 returns the prior draws unchanged.
  int nfe = 20;
  /// Default: uniform-logsnr for dpm-solver, uniform-t otherwise.
  std::optional<Spacing> spacing;
  /// Default: end_time_for(nfe).
  std::optional<double> t_end;
  Seed seed{0};
  /// Multiplies the Brownian increment of sde-euler; 0 gives the deterministic limit.
  double noise_scale = 1.0;

  void validate() const;
  /// Model evaluations per integration step.
  int evals_per_step() const;
  int steps() const { return nfe / evals_per_step(); }
  Spacing grid_spacing() const;
};

/// Step grid of the sampler (empty when steps() == 0).
TimeGrid sampler_grid(const NoiseSchedule& schedule, const SamplerConfig& config);

/// Every time at which the sampler calls the model, decreasing and de-duplicated.
std::vector<double> evaluation_times(const NoiseSchedule& schedule, const SamplerConfig& config);

/// x_T ~ N(0, prior_std^2 I), one chain per column.
Eigen::MatrixXd prior_draws(const NoiseSchedule& schedule, Eigen::Index dim, Eigen::Index n, Seed seed);

struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> states;  // states[i] at times[i]; only the last one unless keep_states
  long evaluations = 0;                  // model calls per chain

  const Eigen::MatrixXd& samples() const { return states.back(); }
};

/// Runs n chains from prior draws seeded by config.seed.
Trajectory sample(const Model& model, const NoiseSchedule& schedule, const SamplerConfig& config, Eigen::Index n,
                  bool keep_states = false);

/// Runs the sampler from the given x_T (k x n) instead of prior draws.
Trajectory sample_from(const Model& model, const NoiseSchedule& schedule, const SamplerConfig& config,
                       const Eigen::MatrixXd& x_T, bool keep_states = false);

}  // namespace caldpm
