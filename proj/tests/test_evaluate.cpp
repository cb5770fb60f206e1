#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "caldpm/calibrate.hpp"
#include "caldpm/data.hpp"
#include "caldpm/errors.hpp"
#include "caldpm/evaluate.hpp"
#include "caldpm/model.hpp"
#include "caldpm/parametrize.hpp"
#include "caldpm/scorenet.hpp"
#include "caldpm/stats.hpp"
#include "common.hpp"

using namespace caldpm;
using P = Parametrization;

namespace {

const NoiseSchedule kVp = NoiseSchedule::vp_linear();
const NoiseSchedule kVe = NoiseSchedule::ve_geometric();

ModelPtr oracle(const GaussianMixture& mix, P p, const NoiseSchedule& s = kVp) {
  return std::make_shared<OracleModel>(mix, s, p);
}

ModelPtr biased(const GaussianMixture& mix, P p, const Eigen::VectorXd& b, const NoiseSchedule& s = kVp) {
  return std::make_shared<BiasedModel>(oracle(mix, p, s), b);
}

// int_lo^hi g^2 / sigma^2 dt for VP-linear: with B(t) = int_0^t beta, sigma^2 = 1 - exp(-B),
// so the integrand is B' / (1 - exp(-B)) = d/dt log(exp(B) - 1).
double vp_g2_over_sigma2(double lo, double hi) {
  auto B = [](double t) { return 0.1 * t + 0.5 * (20 - 0.1) * t * t; };
  return std::log(std::expm1(B(hi))) - std::log(std::expm1(B(lo)));
}

int count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("caldpm_eval_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("sm objective against the oracle") {
  const auto mix = testing::three_mixture();
  for (const auto& sched : {kVp, kVe}) {
    CHECK(sm_objective_vs_oracle(*oracle(mix, P::score, sched), mix, sched, 0.4, 5000, Seed(1)).value == 0.0);
    // Other parametrizations round-trip through the conversion.
    for (P p : {P::noise, P::data})
      CHECK(sm_objective_vs_oracle(*oracle(mix, p, sched), mix, sched, 0.4, 5000, Seed(1)).value <= 1e-25);
  }
  // A constant score offset b costs exactly 1/2 ||b||^2.
  const Eigen::Vector2d b(0.3, -0.4);
  const auto e = sm_objective_vs_oracle(*biased(mix, P::score, b), mix, kVp, 0.4, 5000, Seed(1));
  CHECK(e.value == doctest::Approx(0.5 * b.squaredNorm()).epsilon(1e-12));
  // A noise offset b is a score offset -b / sigma_t.
  const auto en = sm_objective_vs_oracle(*biased(mix, P::noise, b), mix, kVp, 0.4, 5000, Seed(1));
  CHECK(en.value == doctest::Approx(0.5 * b.squaredNorm() / kVp.sigma2(0.4)).epsilon(1e-9));
}

TEST_CASE("calibration lowers the sm objective by the gap on common draws") {
  const auto mix = testing::three_mixture();
  const DataSource src = DataSource::from_mixture(mix);
  NetConfig c;
  c.dim = 2;
  c.hidden = {16};
  for (P p : {P::score, P::noise, P::data}) {
    c.param = p;
    const auto net = std::make_shared<NetModel>(c, init_params(c, Seed(3)));
    EstimateOptions opt;
    opt.control = &mix;
    const std::vector<double> times{0.05, 0.3, 0.8};
    const auto table = estimate_table(*net, src, kVp, times, 4000, Seed(9), opt);
    const auto cal = caldpm::apply(net, table);
    for (const auto& entry : table.entries) {
      const double drop = sm_objective_vs_oracle(*net, mix, kVp, entry.t, 4000, Seed(9)).value -
                          sm_objective_vs_oracle(*cal, mix, kVp, entry.t, 4000, Seed(9)).value;
      // In score units every parametrization's gap reads 1/2 ||eta_score||^2.
      const Eigen::VectorXd eta_score = convert(entry.value, p, P::score, Eigen::VectorXd::Zero(2), entry.t, kVp) -
                                        convert(Eigen::VectorXd::Zero(2), p, P::score, Eigen::VectorXd::Zero(2),
                                                entry.t, kVp);
      CHECK(testing::rel(drop, 0.5 * eta_score.squaredNorm()) <= 1e-9);
      if (p == P::score || p == P::noise) CHECK(testing::rel(drop, objective_gap(p, entry.value, entry.t, kVp)) <= 1e-9);
    }
  }
}

TEST_CASE("dsm objective") {
  const auto mix = testing::two_mixture();
  const DataSource src = DataSource::from_mixture(mix);

  SUBCASE("perfect denoiser on its own draws") {
    // Returns the drawn noise exactly.
    struct Cheat final : Model {
      const DataSource* src;
      Eigen::Index dim() const override { return 2; }
      Parametrization parametrization() const override { return P::noise; }
      Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t) const override {
        const auto d = draw_forward(*src, kVp, t, x.cols(), Seed(4));
        REQUIRE(d.xt == x);
        return d.noise;
      }
    } cheat;
    cheat.src = &src;
    CHECK(dsm_objective(cheat, src, kVp, 0.3, 500, Seed(4)).value == 0.0);
  }

  SUBCASE("base minus calibrated equals the gap") {
    const Eigen::Vector2d b(0.2, 0.5);
    for (P p : {P::noise, P::score, P::data, P::velocity}) {
      const auto base = biased(mix, p, b);
      EstimateOptions opt;
      opt.antithetic = true;
      const auto table = estimate_table(*base, src, kVp, {0.1, 0.5}, 3000, Seed(2), opt);
      const auto cal = caldpm::apply(base, table);
      for (const auto& e : table.entries) {
        const double drop = dsm_objective(*base, src, kVp, e.t, 3000, Seed(2), true).value -
                            dsm_objective(*cal, src, kVp, e.t, 3000, Seed(2), true).value;
        CHECK(testing::rel(drop, objective_gap(p, e.value, e.t, kVp)) <= 1e-9);
      }
    }
  }

  SUBCASE("sm and dsm differ by a model-independent constant") {
    // Paired per-draw oracle: (SM_B - SM_A) - (DSM_B - DSM_A) with A the oracle has mean zero.
    const double t = 0.25;
    const Eigen::Index n = 40000;
    const std::vector<double> biases{0.3, -0.6};
    const ClassBiasedOracle model_b(mix, kVp, P::score, {Eigen::Vector2d(biases[0], 0.1), Eigen::Vector2d(0, biases[1])});
    const auto model_a = oracle(mix, P::score);
    const auto d = draw_forward(src, kVp, t, n, Seed(6));
    const Eigen::MatrixXd sa = score(mix, kVp, d.xt, t);
    const Eigen::MatrixXd sb = model_b.eval(d.xt, t);
    const Eigen::MatrixXd target = -d.noise / kVp.sigma(t);
    const Eigen::VectorXd per = (0.5 * (sb - sa).colwise().squaredNorm() -
                                 0.5 * ((sb - target).colwise().squaredNorm() - (sa - target).colwise().squaredNorm()))
                                    .transpose();
    const Estimate dd = scalar_mean(per);
    const double sm_diff = sm_objective_vs_oracle(model_b, mix, kVp, t, n, Seed(6)).value -
                           sm_objective_vs_oracle(*model_a, mix, kVp, t, n, Seed(6)).value;
    const double dsm_diff = dsm_objective(model_b, src, kVp, t, n, Seed(6)).value -
                            dsm_objective(*model_a, src, kVp, t, n, Seed(6)).value;
    CHECK(std::abs((sm_diff - dsm_diff) - dd.value) <= 1e-9 * (1 + std::abs(sm_diff)));
    CHECK(std::abs(dd.value) <= 4 * dd.se);
    CHECK(sm_diff > 10 * dd.se);
  }
}

TEST_CASE("zero-mean check") {
  const auto mix = testing::three_mixture();
  const std::vector<double> times{0.01, 0.1, 0.5, 1.0};
  for (const auto& sched : {kVp, kVe}) {
    const auto rows = zero_mean_check(mix, sched, times, 100000, Seed(12));
    REQUIRE(rows.size() == times.size());
    for (const auto& r : rows) CHECK(r.pass);
  }
  // Single Gaussian N(m, C): the score is affine, so its MC mean is -C_t^{-1}(mean(x_t) - m_t).
  const auto g = GaussianMixture::gaussian(Eigen::Vector2d(1, -1), Eigen::Matrix2d::Identity() * 0.5);
  const auto row = zero_mean_check(g, kVp, {0.3}, 20000, Seed(4)).front();
  const auto d = draw_forward(DataSource::from_mixture(g), kVp, 0.3, 20000, Seed(4));
  const double var = kVp.alpha(0.3) * kVp.alpha(0.3) * 0.5 + kVp.sigma2(0.3);
  const Eigen::Vector2d expect = -(d.xt.rowwise().mean() - kVp.alpha(0.3) * Eigen::Vector2d(1, -1)) / var;
  CHECK(row.norm == doctest::Approx(expect.norm()).epsilon(1e-9));

  // Control case: a score offset b shows up as the mean.
  const Eigen::Vector2d b(0.05, -0.08);
  const auto model = biased(mix, P::score, b);
  for (const auto& r : zero_mean_check(mix, kVp, times, 100000, Seed(12), model.get())) {
    CHECK_FALSE(r.pass);
    CHECK(std::abs(r.norm - b.norm()) <= 3 * r.se);
  }
}

TEST_CASE("martingale check") {
  const auto g = GaussianMixture::gaussian(Eigen::Vector2d(0.5, -1), (Eigen::Matrix2d() << 0.6, 0.2, 0.2, 0.3).finished());
  const Eigen::MatrixXd x = testing::random_matrix(2, 50, 3, 2.0);
  for (const auto& sched : {kVp, kVe})
    for (auto [s, t] : std::vector<std::pair<double, double>>{{0.01, 0.2}, {0.2, 0.9}, {0.5, 0.5}, {1e-5, 1.0}})
      CHECK(martingale_closed_form(g, sched, s, t, x) <= 1e-10);
  CHECK_THROWS_AS(martingale_closed_form(testing::two_mixture(), kVp, 0.1, 0.2, x), ArgumentError);

  const auto mix = testing::three_mixture();
  for (const auto& sched : {kVp, kVe}) {
    const auto rows = martingale_check(mix, sched, {{0.05, 0.3}, {0.3, 0.7}, {0.4, 0.4}}, 8, 20000, Seed(5));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].max_z <= 4);
    CHECK(rows[1].max_z <= 4);
    CHECK(rows[2].max_abs == 0.0);
  }
}

TEST_CASE("concentration check") {
  const auto mix = testing::two_mixture();
  std::vector<double> grid;
  for (int i = 0; i <= 50; ++i) grid.push_back(1e-3 + (1.0 - 1e-3) * i / 50);
  for (const auto& sched : {kVp, kVe})
    for (int coord : {0, 1}) {
      const auto report = concentration_check(mix, sched, grid, coord, {0.0, 0.5, 1.0, 2.0, 4.0},
                                              {0.5, 1.0, 2.0, 1e6}, 4000, Seed(8));
      REQUIRE(report.rows.size() == 9);
      CHECK(report.sum_c2 > 0);
      CHECK_FALSE(report.caveat.empty());
      for (const auto& r : report.rows) {
        CAPTURE(r.kind);
        CAPTURE(r.level);
        CHECK(r.pass);
      }
      CHECK(report.rows[0].bound >= 1.0);
      CHECK(report.rows.back().frequency == 0.0);
    }
  CHECK_THROWS_AS(concentration_check(mix, kVp, {0.5}, 0, {1.0}, {1.0}, 10, Seed(1)), ArgumentError);
  CHECK_THROWS_AS(concentration_check(mix, kVp, {0.5, 0.1}, 0, {1.0}, {1.0}, 10, Seed(1)), ArgumentError);
  CHECK_THROWS_AS(concentration_check(mix, kVp, grid, 2, {1.0}, {1.0}, 10, Seed(1)), ArgumentError);
}

TEST_CASE("quadrature") {
  const auto q = make_quadrature(kVp, 400);
  CHECK(q.times.front() == kVp.t_min());
  CHECK(q.times.back() == kVp.horizon());
  double total = 0;
  for (double w : q.weights) total += w;
  CHECK(total == doctest::Approx(kVp.horizon() - kVp.t_min()).epsilon(1e-4));
  // int beta(t) dt on the VE schedule: sigma^2 grows geometrically.
  const auto qe = make_quadrature(kVe, 400, 0.1, 0.9);
  double s = 0;
  for (std::size_t i = 0; i < qe.times.size(); ++i) s += qe.weights[i] * kVe.sigma2(qe.times[i]);
  const double k = 2 * std::log(50 / 0.01);
  CHECK(s == doctest::Approx((kVe.sigma2(0.9) - kVe.sigma2(0.1)) / k).epsilon(1e-4));
  CHECK_THROWS_AS(make_quadrature(kVp, 1), ArgumentError);
  CHECK_THROWS_AS(make_quadrature(kVp, 10, 0.5, 0.2), ArgumentError);
}

TEST_CASE("likelihood gain") {
  const auto zero = zero_table(kVp, P::noise, 2, make_quadrature(kVp, 64).times);
  CHECK(likelihood_gain(zero, kVp, make_quadrature(kVp, 64)).value == 0.0);

  // Constant noise bias b: 1/2 ||b||^2 int g^2 / sigma^2 dt.
  const Eigen::Vector2d b(0.1, -0.05);
  auto constant = [&](const std::vector<double>& times) {
    CalibrationTable t = zero_table(kVp, P::noise, 2, times);
    for (auto& e : t.entries) e.value = b;
    return t;
  };
  const auto coarse = make_quadrature(kVp, 200);
  const auto fine = make_quadrature(kVp, 2000);
  const auto g_coarse = likelihood_gain(constant(coarse.times), kVp, coarse);
  const auto g_fine = likelihood_gain(constant(fine.times), kVp, fine);
  CHECK(testing::rel(g_coarse.value, g_fine.value) <= 1e-3);
  const double exact = 0.5 * b.squaredNorm() * vp_g2_over_sigma2(kVp.t_min(), kVp.horizon());
  CHECK(testing::rel(g_fine.value, exact) <= 1e-4);

  // Additivity of the curve.
  double sum = 0;
  for (const auto& row : g_coarse.curve) {
    sum += row.contribution;
    CHECK(row.gap >= 0);
    CHECK(row.weighted == doctest::Approx(drift_diffusion(kVp, row.t).diffusion2 * row.gap));
  }
  CHECK(std::abs(sum - g_coarse.value) <= 1e-12 * g_coarse.value);
  CHECK(g_coarse.curve.size() == coarse.times.size());

  // The table has to cover the quadrature range.
  const auto narrow = constant({0.1, 0.5, 0.9});
  CHECK_THROWS_AS(likelihood_gain(narrow, kVp, coarse), RangeError);
  CHECK(likelihood_gain(narrow, kVp, make_quadrature(kVp, 50, 0.1, 0.9)).value > 0);
}

TEST_CASE("lemma 1 bound") {
  SUBCASE("oracle on the standard normal") {
    const auto mix = GaussianMixture::standard_normal(2);
    const auto r = lemma1_bound(*oracle(mix, P::noise), mix, kVp, make_quadrature(kVp, 40), 2000, Seed(1), 100000);
    CHECK(r.sm_integral <= 1e-25);
    // KL(q_T || p_T) is about alpha_T^4 here.
    CHECK(std::abs(r.value) <= 3 * r.kl.se + 1e-6);
  }
  SUBCASE("calibration subtracts the likelihood gain exactly") {
    const auto mix = testing::two_mixture();
    const DataSource src = DataSource::from_mixture(mix);
    const auto quad = make_quadrature(kVp, 30, 1e-3, 1.0);
    NetConfig c;
    c.dim = 2;
    c.hidden = {16};
    const auto net = std::make_shared<NetModel>(c, init_params(c, Seed(2)));
    EstimateOptions opt;
    opt.control = &mix;
    const auto table = estimate_table(*net, src, kVp, quad.times, 3000, Seed(4), opt);
    const auto cal = caldpm::apply(net, table);
    const auto before = lemma1_bound(*net, mix, kVp, quad, 3000, Seed(4), 20000);
    const auto after = lemma1_bound(*cal, mix, kVp, quad, 3000, Seed(4), 20000);
    const double gain = likelihood_gain(table, kVp, quad).value;
    CHECK(gain > 0);
    CHECK(after.value <= before.value);
    CHECK(testing::rel(before.value - after.value, gain) <= 1e-9);
    CHECK(before.kl.value == after.kl.value);
    CHECK(after.value >= -3 * after.kl.se);
  }
}

TEST_CASE("ode log-likelihood") {
  SUBCASE("standard normal") {
    const auto mix = GaussianMixture::standard_normal(2);
    const Eigen::MatrixXd x = testing::random_matrix(2, 20, 5);
    const auto r = ode_loglik(*oracle(mix, P::noise), kVp, x);
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      CHECK(std::abs(r.loglik(j) - testing::gauss_logpdf(x.col(j), Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity())) <=
            1e-3);
  }
  SUBCASE("correlated Gaussian") {
    const Eigen::Vector2d m(0.8, -0.4);
    Eigen::Matrix2d C;
    C << 0.5, 0.2, 0.2, 1.5;
    const auto g = GaussianMixture::gaussian(m, C);
    const Eigen::MatrixXd x = testing::random_matrix(2, 20, 6);
    const auto r = ode_loglik(*oracle(g, P::noise), kVp, x);
    // The exact flow carries q_{t_min} to q_T, so p^ODE = q_{t_min} p_T(x_T) / q_T(x_T).
    auto marginal_cov = [&](double t) {
      return Eigen::Matrix2d(kVp.alpha(t) * kVp.alpha(t) * C + kVp.sigma2(t) * Eigen::Matrix2d::Identity());
    };
    const double t0 = kVp.t_min(), T = kVp.horizon();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double expect = testing::gauss_logpdf(x.col(j), kVp.alpha(t0) * m, marginal_cov(t0)) +
                            testing::gauss_logpdf(r.x_T.col(j), Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity()) -
                            testing::gauss_logpdf(r.x_T.col(j), kVp.alpha(T) * m, marginal_cov(T));
      CHECK(std::abs(r.loglik(j) - expect) <= 1e-3);
      // The prior mismatch term is what separates p^ODE from q_0 here.
      CHECK(std::abs(r.loglik(j) - testing::gauss_logpdf(x.col(j), m, C)) <= 0.05);
    }
  }
  SUBCASE("cross-entropy is at least the entropy") {
    const auto mix = testing::three_mixture();
    const auto pts = sample_data(mix, 400, Seed(7)).points;
    const MarginalMixture q0(mix, kVp, 0.0);
    const Eigen::VectorXd log_q = q0.log_density(pts);
    const Eigen::VectorXd log_p = ode_loglik(*oracle(mix, P::noise), kVp, pts).loglik;
    const Estimate kl = scalar_mean(log_q - log_p);
    CHECK(kl.value >= -3 * kl.se);
    const Eigen::VectorXd log_pb = ode_loglik(*biased(mix, P::noise, Eigen::Vector2d(0.3, 0.3)), kVp, pts).loglik;
    const Estimate kl_b = scalar_mean(log_q - log_pb);
    CHECK(kl_b.value > 3 * kl_b.se);
    const Estimate h = mixture_entropy(mix, 200000, Seed(8));
    CHECK(-log_pb.mean() > h.value);
  }
  SUBCASE("zero table is bitwise neutral") {
    const auto mix = testing::two_mixture();
    const auto base = oracle(mix, P::noise);
    const CalibratedModel cal(base, zero_table(kVp, P::noise, 2, {kVp.t_min(), 1.0}));
    const Eigen::MatrixXd x = testing::random_matrix(2, 10, 9);
    LoglikConfig cfg;
    cfg.steps = 50;
    CHECK(ode_loglik(*base, kVp, x, cfg).loglik == ode_loglik(cal, kVp, x, cfg).loglik);
  }
  CHECK_THROWS_AS(ode_loglik(*oracle(testing::two_mixture(), P::noise), kVp, Eigen::MatrixXd::Zero(3, 2)),
                  ArgumentError);
}

TEST_CASE("entropy of a Gaussian") {
  Eigen::Matrix2d C;
  C << 0.7, 0.1, 0.1, 0.4;
  const auto g = GaussianMixture::gaussian(Eigen::Vector2d(1, 2), C);
  const auto h = mixture_entropy(g, 100000, Seed(3));
  const double exact = 0.5 * std::log(std::pow(2 * M_PI * M_E, 2) * C.determinant());
  CHECK(std::abs(h.value - exact) <= 3 * h.se);
}

TEST_CASE("conservativeness and Jacobian invariance") {
  const auto mix = testing::three_mixture();
  const Eigen::MatrixXd pts = testing::random_matrix(2, 6, 4, 1.5);
  for (double t : {0.05, 0.5})
    for (P p : {P::noise, P::score}) CHECK(conservativeness_check(*oracle(mix, p), kVp, pts, t) <= 1e-4);

  NetConfig c;
  c.dim = 2;
  c.hidden = {16, 16};
  const auto net = std::make_shared<NetModel>(c, init_params(c, Seed(5)));
  // Generic networks are not gradient fields; this is a reported value, not a failure.
  CHECK(conservativeness_check(*net, kVp, pts, 0.5) > 1e-3);

  const Eigen::Vector2d b(0.4, -0.2);
  const std::vector<ModelPtr> models{oracle(mix, P::noise), biased(mix, P::noise, b), net};
  for (const auto& m : models) {
    const auto table = estimate_table(*m, DataSource::from_mixture(mix), kVp, {0.1, 0.5, 0.9}, 2000, Seed(1));
    const auto cal = caldpm::apply(m, table);
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
      CHECK((jacobian(*cal, pts.col(j), 0.5) - jacobian(*m, pts.col(j), 0.5)).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK((score_jacobian(*cal, kVp, pts.col(j), 0.3) - score_jacobian(*m, kVp, pts.col(j), 0.3))
                .cwiseAbs()
                .maxCoeff() <= 1e-10);
    }
  }
  // The FD Jacobian of the oracle score matches the analytic one for a single Gaussian.
  const auto g = GaussianMixture::gaussian(Eigen::Vector2d(0, 1), (Eigen::Matrix2d() << 0.5, 0.1, 0.1, 0.3).finished());
  const double t = 0.2;
  const Eigen::Matrix2d cov =
      kVp.alpha(t) * kVp.alpha(t) * g[0].cov + kVp.sigma2(t) * Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d J = score_jacobian(*oracle(g, P::noise), kVp, Eigen::Vector2d(0.3, 0.3), t);
  CHECK((J + cov.inverse()).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("expected noise export") {
  const auto mix = testing::two_mixture();
  const DataSource src = DataSource::from_mixture(mix);
  const std::vector<double> times{0.05, 0.2, 0.5, 0.8};
  const auto dir = temp_dir("noise");

  const auto rows = expected_noise_export(*oracle(mix, P::noise), src, kVp, times, 50000, Seed(2), dir / "oracle.csv");
  REQUIRE(rows.size() == times.size());
  for (const auto& r : rows) CHECK(r.mean.norm() <= 3 * r.se);
  CHECK(count_lines(dir / "oracle.csv") == static_cast<int>(times.size()) + 1);

  const Eigen::Vector2d b(0.3, 0.2);
  const auto brows = expected_noise_export(*biased(mix, P::noise, b), src, kVp, times, 50000, Seed(2));
  for (std::size_t i = 0; i < brows.size(); ++i) {
    // Same draws: the biased mean is the oracle mean shifted by b.
    CHECK((brows[i].mean - rows[i].mean - b).norm() <= 1e-12);
    CHECK(std::abs(brows[i].half_norm2 - 0.5 * b.squaredNorm()) <= 3 * b.norm() * brows[i].se + 2 * rows[i].se * rows[i].se);
    CHECK(brows[i].weighted ==
          doctest::Approx(drift_diffusion(kVp, times[i]).diffusion2 / kVp.sigma2(times[i]) * brows[i].half_norm2));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("frechet distance of Gaussian fits") {
  const Eigen::MatrixXd a = testing::random_matrix(3, 500, 1);
  CHECK(frechet_gaussian(a, a) <= 1e-10);
  const Eigen::MatrixXd b = testing::random_matrix(3, 400, 2, 1.5);
  CHECK(std::abs(frechet_gaussian(a, b) - frechet_gaussian(b, a)) <= 1e-9);

  const Eigen::Vector3d m(1, -2, 0.5);
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  CHECK(frechet_gaussian(Eigen::Vector3d::Zero(), I, m, I) == doctest::Approx(m.squaredNorm()).epsilon(1e-12));
  // Commuting covariances: sum (sqrt(a_i) - sqrt(b_i))^2.
  const Eigen::Vector3d da(1, 4, 9), db(4, 1, 1);
  CHECK(frechet_gaussian(Eigen::Vector3d::Zero(), da.asDiagonal().toDenseMatrix(), Eigen::Vector3d::Zero(),
                         db.asDiagonal().toDenseMatrix()) == doctest::Approx(1 + 1 + 4).epsilon(1e-10));
  // General case against an independent route: tr sqrt(A B) from the eigenvalues of A B.
  Eigen::Matrix3d A = testing::random_matrix(3, 3, 7);
  A = A * A.transpose() + 0.1 * I;
  Eigen::Matrix3d B = testing::random_matrix(3, 3, 8);
  B = B * B.transpose() + 0.1 * I;
  const Eigen::VectorXcd ev = (A * B).eigenvalues();
  double tr = 0;
  for (Eigen::Index i = 0; i < 3; ++i) tr += std::sqrt(ev(i).real());
  CHECK(frechet_gaussian(Eigen::Vector3d::Zero(), A, Eigen::Vector3d::Zero(), B) ==
        doctest::Approx(A.trace() + B.trace() - 2 * tr).epsilon(1e-8));

  bool reg = false;
  Eigen::MatrixXd flat = testing::random_matrix(3, 50, 3);
  flat.row(2).setZero();
  CHECK(frechet_gaussian(flat, a, &reg) >= 0);
  CHECK(reg);
  frechet_gaussian(a, b, &reg);
  CHECK_FALSE(reg);
  CHECK_THROWS_AS(frechet_gaussian(a.leftCols(3), b), ArgumentError);
  CHECK_THROWS_AS(frechet_gaussian(a, b.topRows(2)), ArgumentError);
}

TEST_CASE("eval report") {
  EvalReport r;
  r.add({"a", 1.5, 0.1, true, ""});
  r.add({"b", 2.0, std::nullopt, std::nullopt, "info"});
  r.add_curve("gain", {"t", "value"}, {{0.1, 1.0}, {0.2, 2.0}});
  CHECK(r.passed());
  const auto lines = r.to_jsonl();
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 2);
  const auto first = nlohmann::json::parse(lines.substr(0, lines.find('\n')));
  CHECK(first["name"] == "a");
  CHECK(first["se"] == 0.1);

  const auto dir = temp_dir("report");
  r.write(dir, "abc");
  CHECK(count_lines(dir / "report.jsonl") == 3);
  CHECK(count_lines(dir / "curve_gain.csv") == 4);
  r.add({"c", 0, 0.0, false, ""});
  CHECK_FALSE(r.passed());
  std::filesystem::remove_all(dir);

  const Eigen::MatrixXd s = testing::random_matrix(2, 7, 1);
  write_samples_csv(dir.parent_path() / "caldpm_eval_samples.csv", s, "h");
  CHECK(read_samples_csv(dir.parent_path() / "caldpm_eval_samples.csv") == s);
  std::filesystem::remove(dir.parent_path() / "caldpm_eval_samples.csv");
}
