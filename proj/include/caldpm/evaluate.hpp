#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "caldpm/calibrate.hpp"
#include "caldpm/data.hpp"
#include "caldpm/mixture.hpp"
#include "caldpm/model.hpp"
#include "caldpm/rng.hpp"
#include "caldpm/schedule.hpp"
#include "caldpm/stats.hpp"

namespace caldpm {

/// MC of 1/2 ||s_model(x_t) - grad log q_t(x_t)||^2 over x_t ~ q_t. Draws match
/// draw_forward(mixture, schedule, t, n, seed, antithetic).
Estimate sm_objective_vs_oracle(const Model& model, const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                double t, Eigen::Index n, Seed seed, bool antithetic = false);

/// Empirical DSM objective in the model's own parametrization: w_t ||model - target||^2.
Estimate dsm_objective(const Model& model, const DataSource& source, const NoiseSchedule& schedule, double t,
                       Eigen::Index n, Seed seed, bool antithetic = false);

struct ZeroMeanRow {
  double t = 0;
  double norm = 0;  // ||MC mean of the score||
  double se = 0;
  bool pass = false;  // norm <= 3 se
};

/// Mean of the oracle score (or of `model` in score form, when given) over q_t.
std::vector<ZeroMeanRow> zero_mean_check(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                         const std::vector<double>& times, Eigen::Index n, Seed seed,
                                         const Model* model = nullptr);

struct MartingaleRow {
  double s = 0, t = 0;
  double max_z = 0;    // max over outer points of ||inner mean - alpha_t score(x_t)|| / se
  double max_abs = 0;  // max absolute discrepancy
};

/// Nested MC of E[alpha_s score(x_s, s) | x_t] against alpha_t score(x_t, t).
std::vector<MartingaleRow> martingale_check(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                            const std::vector<std::pair<double, double>>& pairs,
                                            Eigen::Index n_outer, Eigen::Index n_inner, Seed seed);

/// Single Gaussian only: the same discrepancy with the inner expectation in
/// closed form; returns the max absolute entry over the columns of x_t.
double martingale_closed_form(const GaussianMixture& gaussian, const NoiseSchedule& schedule, double s, double t,
                              const Eigen::MatrixXd& x_t);

struct ConcentrationRow {
  std::string kind;  // "azuma" or "doob"
  double level = 0;  // epsilon or C
  double frequency = 0;
  double bound = 0;
  bool pass = false;
};

struct ConcentrationReport {
  std::vector<ConcentrationRow> rows;
  double sum_c2 = 0;  // sum of squared empirical increment ranges
  std::string caveat;
};

/// Exact reverse chains x_T ~ q_T -> ... -> x_{t_0} along `grid` (increasing
/// times, last = T) tracking M_t = alpha_t d_i log q_t(x_t).
ConcentrationReport concentration_check(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                        const std::vector<double>& grid, int coordinate,
                                        const std::vector<double>& eps_levels,
                                        const std::vector<double>& doob_levels, Eigen::Index n, Seed seed);

/// Nodes uniform in log-SNR on [t_lo, t_hi] with trapezoid weights for dt:
/// int F dt ~ sum_i weights[i] F(times[i]).
struct Quadrature {
  std::vector<double> times;  // increasing
  std::vector<double> weights;
};

Quadrature make_quadrature(const NoiseSchedule& schedule, int points, std::optional<double> t_lo = std::nullopt,
                           std::optional<double> t_hi = std::nullopt);

struct GainRow {
  double t = 0;
  double gap = 0;           // objective_gap(eta_t)
  double weighted = 0;      // g^2 gap
  double contribution = 0;  // quadrature weight * g^2 * gap
};

struct GainResult {
  double value = 0;
  std::vector<GainRow> curve;
};

/// int g^2 gap(eta_t) dt; for noise tables g^2 / (2 sigma^2) ||eta||^2.
GainResult likelihood_gain(const CalibrationTable& table, const NoiseSchedule& schedule, const Quadrature& quad);

struct BoundResult {
  double value = 0;
  double sm_integral = 0;
  Estimate kl;
  std::vector<Estimate> sm;  // per quadrature node
};

/// int g^2 J_SM^t dt + KL(q_T || p_T). Node i uses draw_forward(..., times[i], n, seed).
BoundResult lemma1_bound(const Model& model, const GaussianMixture& mixture, const NoiseSchedule& schedule,
                         const Quadrature& quad, Eigen::Index n, Seed seed, Eigen::Index kl_n = 100000,
                         bool antithetic = false);

struct LoglikConfig {
  int steps = 200;  // RK4 steps, log-SNR spaced
  double fd_step = 1e-4;
  std::optional<double> t_start;  // default t_min
};

struct LoglikResult {
  Eigen::VectorXd loglik;
  Eigen::MatrixXd x_T;
  Eigen::VectorXd divergence_integral;
};

/// log p_0^ODE(x_0) by the instantaneous change of variables with an exact
/// k-column finite-difference trace.
LoglikResult ode_loglik(const Model& model, const NoiseSchedule& schedule, const Eigen::MatrixXd& x0,
                        const LoglikConfig& config = {});

/// Finite-difference Jacobian of the model output (own parametrization) at one point.
Eigen::MatrixXd jacobian(const Model& model, const Eigen::VectorXd& x, double t, double h = 1e-4);
/// Same for the output converted to a score.
Eigen::MatrixXd score_jacobian(const Model& model, const NoiseSchedule& schedule, const Eigen::VectorXd& x, double t,
                               double h = 1e-4);

/// max |J - J^T| of the score Jacobian over the columns of `points`.
double conservativeness_check(const Model& model, const NoiseSchedule& schedule, const Eigen::MatrixXd& points,
                              double t, double h = 1e-4);

struct NoiseRow {
  double t = 0;
  Eigen::VectorXd mean;  // E[eps_model(x_t)]
  double se = 0;
  double half_norm2 = 0;  // ||mean||^2 / 2
  double weighted = 0;    // g^2 / (2 sigma^2) ||mean||^2
};

/// Expected predicted noise per time, written as CSV when `path` is set.
std::vector<NoiseRow> expected_noise_export(const Model& model, const DataSource& source,
                                            const NoiseSchedule& schedule, const std::vector<double>& times,
                                            Eigen::Index n, Seed seed,
                                            const std::optional<std::filesystem::path>& path = std::nullopt);

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2) of Gaussian fits.
/// Rank-deficient covariances get 1e-10 I added and set *regularized.
double frechet_gaussian(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, bool* regularized = nullptr);
/// The same distance from given moments.
double frechet_gaussian(const Eigen::VectorXd& mean_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mean_b,
                        const Eigen::MatrixXd& cov_b, bool* regularized = nullptr);

/// -E log q_0 by MC.
Estimate mixture_entropy(const GaussianMixture& mixture, Eigen::Index n, Seed seed);

/// Named scalars with SEs and pass flags plus (t, value) curves.
class EvalReport {
 public:
  struct Record {
    std::string name;
    double value = 0;
    std::optional<double> se;
    std::optional<bool> pass;
    std::string detail;
  };

  void add(Record record) { records_.push_back(std::move(record)); }
  void add_curve(const std::string& name, std::vector<std::string> columns, std::vector<std::vector<double>> rows);

  const std::vector<Record>& records() const { return records_; }
  bool passed() const;

  /// One JSON object per line.
  std::string to_jsonl() const;
  /// Writes report.jsonl plus one CSV per curve into `dir`.
  void write(const std::filesystem::path& dir, const std::string& config_hash) const;

 private:
  struct Curve {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
  };
  std::vector<Record> records_;
  std::map<std::string, Curve> curves_;
};

/// Writes a matrix (one column per sample) as CSV with one row per sample,
/// preceded by a "# config_hash <hash>" line when the hash is nonempty.
void write_samples_csv(const std::filesystem::path& path, const Eigen::MatrixXd& samples,
                       const std::string& config_hash = "");
Eigen::MatrixXd read_samples_csv(const std::filesystem::path& path);
std::string format_double(double v);

}  // namespace caldpm
