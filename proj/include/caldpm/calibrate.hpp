#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "caldpm/data.hpp"
#include "caldpm/model.hpp"
#include "caldpm/parametrize.hpp"
#include "caldpm/rng.hpp"
#include "caldpm/schedule.hpp"

namespace caldpm {

struct TableEntry {
  double t = 0;
  Eigen::VectorXd value;
  double se = 0;
  std::optional<int> label;
};

/// Exact comparison, sizes included.
bool operator==(const TableEntry& a, const TableEntry& b);

/// Per-timestep calibration terms eta_t (or eta_t(y)) for one parametrization.
/// Entries are sorted by (label, t) with times strictly increasing per label.
struct CalibrationTable {
  NoiseSchedule schedule = NoiseSchedule::vp_linear();
  Parametrization param = Parametrization::noise;
  Eigen::Index dim = 0;
  /// e.g. "training-data n=100000", "generated-data n=10000 sampler=...", "recorder-network".
  std::string provenance;
  std::string config_hash;
  std::vector<TableEntry> entries;

  bool conditional() const { return !entries.empty() && entries.front().label.has_value(); }
  std::vector<int> labels() const;
  std::vector<double> times(std::optional<int> label = std::nullopt) const;
  /// Throws ArgumentError when an invariant is broken.
  void validate() const;
};

bool operator==(const CalibrationTable& a, const CalibrationTable& b);

CalibrationTable zero_table(const NoiseSchedule& schedule, Parametrization param, Eigen::Index dim,
                            const std::vector<double>& times);

struct EstimateOptions {
  /// Pair every noise draw with its negation (common-random-number identities).
  bool antithetic = false;
  /// Estimate mean(model - oracle) instead of mean(model); same expectation, lower variance.
  const GaussianMixture* control = nullptr;
  std::string provenance;
};

/// Monte Carlo eta_t at every time of `times`. x_0 draws are shared across times,
/// noise is fresh per time (keyed by the time value). For data and velocity
/// parametrizations E[x_0] is the sample mean of the same draws.
CalibrationTable estimate_table(const Model& model, const DataSource& source, const NoiseSchedule& schedule,
                                const std::vector<double>& times, Eigen::Index n, Seed seed,
                                const EstimateOptions& options = {});

/// Per-label eta_t(y) from joint draws of (x_0, y) ~ q_0.
CalibrationTable estimate_conditional(const Model& model, const GaussianMixture& mixture,
                                      const NoiseSchedule& schedule, const std::vector<double>& times,
                                      Eigen::Index n, Seed seed, const EstimateOptions& options = {});

/// Stored vector when |t - t_i| <= 1e-9, linear in t between entries, RangeError outside.
Eigen::VectorXd lookup(const CalibrationTable& table, double t, std::optional<int> label = std::nullopt);

/// base(x, t) - lookup(t[, y]).
class CalibratedModel final : public Model {
 public:
  CalibratedModel(ModelPtr base, CalibrationTable table);

  Eigen::Index dim() const override { return base_->dim(); }
  Parametrization parametrization() const override { return base_->parametrization(); }
  Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t) const override;
  Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t, const Eigen::VectorXi& labels) const override;

  const Model& base() const { return *base_; }
  const CalibrationTable& table() const { return table_; }

 private:
  ModelPtr base_;
  CalibrationTable table_;
};

/// Throws ConfigError when the table's parametrization or dimension differs from the model's.
std::shared_ptr<CalibratedModel> apply(ModelPtr model, CalibrationTable table);

void save_table(const CalibrationTable& table, const std::filesystem::path& path);
CalibrationTable load_table(const std::filesystem::path& path);
std::string to_text(const CalibrationTable& table);
CalibrationTable parse_table(const std::string& text);

}  // namespace caldpm
