#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "caldpm/mixture.hpp"
#include "caldpm/sample.hpp"
#include "caldpm/schedule.hpp"
#include "caldpm/scorenet.hpp"

namespace caldpm {

struct ModelBlock {
  std::string kind = "oracle";  // oracle | net
  std::optional<std::filesystem::path> checkpoint;
  Parametrization param = Parametrization::noise;  // oracle only
  std::optional<Eigen::VectorXd> bias;             // constant offset in the model's parametrization
};

struct TrainBlock {
  TrainConfig train;
  /// 0: fresh mixture draws every step; otherwise a fixed training set of this size.
  Eigen::Index data_size = 0;
};

struct CalibrationBlock {
  std::string source = "training-data";  // training-data | generated-data
  Eigen::Index n = 10000;
  /// Limits the training set to this many points (0 = unlimited mixture draws).
  Eigen::Index partial = 0;
  std::string grid = "sampler";  // sampler | quadrature
  bool antithetic = false;
};

struct SamplerBlock {
  SamplerConfig config;
  Eigen::Index n = 1000;
};

struct EvaluateBlock {
  Eigen::Index n = 20000;
  int times = 20;
  int quadrature_points = 64;
  Eigen::Index martingale_outer = 20;
  Eigen::Index martingale_inner = 2000;
  Eigen::Index concentration_n = 2000;
  int concentration_steps = 20;
  Eigen::Index loglik_n = 50;
};

/// One experiment. Parsed completely (unknown keys rejected) before any work.
struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  std::filesystem::path out = "run";
  NoiseSchedule schedule = NoiseSchedule::vp_linear();
  std::optional<GaussianMixture> mixture;
  NetConfig net;
  TrainBlock train;
  ModelBlock model;
  CalibrationBlock calibration;
  SamplerBlock sampler;
  EvaluateBlock evaluate;

  /// The normalized config (defaults filled in) as JSON; excludes workers and out.
  nlohmann::ordered_json canonical() const;
  /// 16 hex digits of FNV-1a over canonical().dump().
  std::string hash() const;
  const GaussianMixture& require_mixture() const;
  /// Sets the root seed and re-derives the sampler and training streams.
  void set_seed(std::uint64_t value);
};

/// Throws ConfigError naming the offending key.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace caldpm
