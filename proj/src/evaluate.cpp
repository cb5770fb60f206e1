#include "caldpm/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "caldpm/parallel.hpp"
#include "caldpm/parametrize.hpp"

namespace caldpm {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Estimate sm_objective_vs_oracle(const Model& model, const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                double t, Eigen::Index n, Seed seed, bool antithetic) {
  const DataSource source = DataSource::from_mixture(mixture);
  const ForwardDraws d = draw_forward(source, schedule, t, n, seed, antithetic);
  const Eigen::MatrixXd s_model =
      convert(eval_chunked(model, d.xt, t), model.parametrization(), Parametrization::score, d.xt, t, schedule);
  const MarginalMixture marginal(mixture, schedule, t);
  const Eigen::MatrixXd diff = s_model - marginal.score(d.xt);
  return scalar_mean(0.5 * diff.colwise().squaredNorm().transpose());
}

Estimate dsm_objective(const Model& model, const DataSource& source, const NoiseSchedule& schedule, double t,
                       Eigen::Index n, Seed seed, bool antithetic) {
  const ForwardDraws d = draw_forward(source, schedule, t, n, seed, antithetic);
  const Parametrization p = model.parametrization();
  const Eigen::MatrixXd diff = eval_chunked(model, d.xt, t) - dsm_target(p, d.x0, d.noise, t, schedule);
  return scalar_mean(dsm_weight(p, t, schedule) * diff.colwise().squaredNorm().transpose());
}

std::vector<ZeroMeanRow> zero_mean_check(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                         const std::vector<double>& times, Eigen::Index n, Seed seed,
                                         const Model* model) {
  const DataSource source = DataSource::from_mixture(mixture);
  std::vector<ZeroMeanRow> rows;
  for (double t : times) {
    const ForwardDraws d = draw_forward(source, schedule, t, n, seed);
    const Eigen::MatrixXd s = model ? eval_as(*model, Parametrization::score, d.xt, t, schedule)
                                    : MarginalMixture(mixture, schedule, t).score(d.xt);
    const VectorEstimate m = column_mean(s);
    const double norm = m.mean.norm();
    rows.push_back({t, norm, m.se, norm <= 3 * m.se});
  }
  return rows;
}

std::vector<MartingaleRow> martingale_check(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                            const std::vector<std::pair<double, double>>& pairs,
                                            Eigen::Index n_outer, Eigen::Index n_inner, Seed seed) {
  const DataSource source = DataSource::from_mixture(mixture);
  std::vector<MartingaleRow> rows;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [s, t] = pairs[p];
    MartingaleRow row{s, t, 0, 0};
    if (s == t) {
      rows.push_back(row);  // x_s = x_t: both sides coincide
      continue;
    }
    if (s > t) throw OrderingError("martingale pair needs s <= t");
    const Seed pair_seed = seed.child(p);
    const ForwardDraws outer = draw_forward(source, schedule, t, n_outer, pair_seed.child("outer"));
    const Eigen::MatrixXd rhs = schedule.alpha(t) * MarginalMixture(mixture, schedule, t).score(outer.xt);
    const MarginalMixture at_s(mixture, schedule, s);
    const double alpha_s = schedule.alpha(s);

    std::vector<double> z(n_outer), a(n_outer);
    parallel::for_chunks(
        n_outer,
        [&](Eigen::Index, Eigen::Index begin, Eigen::Index end) {
          for (Eigen::Index j = begin; j < end; ++j) {
            Rng rng = pair_seed.child("inner").child(j).engine();
            const Eigen::MatrixXd xt = outer.xt.col(j).replicate(1, n_inner);
            const Eigen::MatrixXd xs = posterior_sample(mixture, schedule, s, t, xt, rng);
            const VectorEstimate m = column_mean(alpha_s * at_s.score(xs));
            const Eigen::VectorXd diff = m.mean - rhs.col(j);
            z[j] = m.se > 0 ? diff.norm() / m.se : (diff.norm() == 0 ? 0.0 : INFINITY);
            a[j] = diff.cwiseAbs().maxCoeff();
          }
        },
        1);
    row.max_z = *std::max_element(z.begin(), z.end());
    row.max_abs = *std::max_element(a.begin(), a.end());
    rows.push_back(row);
  }
  return rows;
}

double martingale_closed_form(const GaussianMixture& gaussian, const NoiseSchedule& schedule, double s, double t,
                              const Eigen::MatrixXd& x_t) {
  if (gaussian.size() != 1) throw ArgumentError("closed-form martingale check needs a single Gaussian");
  if (s == t) return 0.0;
  const MarginalMixture at_s(gaussian, schedule, s), at_t(gaussian, schedule, t);
  // The score of a Gaussian is affine, so E[score(x_s) | x_t] = score(E[x_s | x_t]).
  const Eigen::MatrixXd lhs = schedule.alpha(s) * at_s.score(posterior_mean(gaussian, schedule, s, t, x_t));
  const Eigen::MatrixXd rhs = schedule.alpha(t) * at_t.score(x_t);
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

ConcentrationReport concentration_check(const GaussianMixture& mixture, const NoiseSchedule& schedule,
                                        const std::vector<double>& grid, int coordinate,
                                        const std::vector<double>& eps_levels,
                                        const std::vector<double>& doob_levels, Eigen::Index n, Seed seed) {
  if (grid.size() < 2) throw ArgumentError("concentration check needs at least two times");
  if (!std::is_sorted(grid.begin(), grid.end())) throw ArgumentError("concentration grid must be increasing");
  if (coordinate < 0 || coordinate >= mixture.dim()) throw ArgumentError("coordinate out of range");
  const std::size_t K = grid.size() - 1;

  // M(k, j) = alpha_{t_k} d_i log q_{t_k}(x_{t_k}) along chain j.
  Eigen::MatrixXd M(K + 1, n);
  std::vector<MarginalMixture> marginals;
  for (double t : grid) marginals.emplace_back(mixture, schedule, t);
  const ForwardDraws start = draw_forward(DataSource::from_mixture(mixture), schedule, grid.back(), n, seed);
  parallel::for_chunks(n, [&](Eigen::Index c, Eigen::Index begin, Eigen::Index end) {
    Rng rng = seed.child("chain").child(c).engine();
    Eigen::MatrixXd x = start.xt.middleCols(begin, end - begin);
    for (std::size_t k = K + 1; k-- > 0;) {
      if (k < K) x = posterior_sample(mixture, schedule, grid[k], grid[k + 1], x, rng);
      M.row(k).segment(begin, end - begin) = schedule.alpha(grid[k]) * marginals[k].score(x).row(coordinate);
    }
  });

  ConcentrationReport report;
  for (std::size_t k = 0; k < K; ++k) {
    const Eigen::RowVectorXd inc = M.row(k) - M.row(k + 1);
    const double c = inc.maxCoeff() - inc.minCoeff();
    report.sum_c2 += c * c;
  }
  const Eigen::ArrayXd total = (M.row(0) - M.row(K)).transpose().array().abs();
  for (double eps : eps_levels) {
    const double freq = (total >= eps).cast<double>().mean();
    const double bound = 2 * std::exp(-2 * eps * eps / report.sum_c2);
    report.rows.push_back({"azuma", eps, freq, bound, freq <= bound});
  }
  const Eigen::ArrayXd sup = M.colwise().maxCoeff().transpose().array();
  const double final_plus = M.row(0).transpose().array().max(0.0).mean();
  for (double C : doob_levels) {
    const double freq = (sup >= C).cast<double>().mean();
    const double bound = final_plus / C;
    report.rows.push_back({"doob", C, freq, bound, freq <= bound});
  }
  report.caveat =
      "increment ranges c_t are the empirical max - min over the sampled chains; Gaussian-mixture score "
      "increments are not almost surely bounded";
  return report;
}

Quadrature make_quadrature(const NoiseSchedule& schedule, int points, std::optional<double> t_lo,
                           std::optional<double> t_hi) {
  if (points < 2) throw ArgumentError("quadrature needs at least two points");
  const double lo = t_lo.value_or(schedule.t_min()), hi = t_hi.value_or(schedule.horizon());
  if (!(lo > 0 && lo < hi && hi <= schedule.horizon())) throw ArgumentError("bad quadrature interval");
  const double l_lo = schedule.log_snr(lo), l_hi = schedule.log_snr(hi);
  const double dl = (l_lo - l_hi) / (points - 1);

  Quadrature q;
  for (int i = 0; i < points; ++i) {
    // Increasing t means decreasing log-SNR.
    const double lambda = l_lo - dl * i;
    double t = schedule.time_from_log_snr(lambda);
    if (i == 0) t = lo;
    if (i == points - 1) t = hi;
    // dt/dlambda = -2 sigma^2 / g^2
    const double jac = 2 * schedule.sigma2(t) / drift_diffusion(schedule, t).diffusion2;
    const double trap = (i == 0 || i == points - 1) ? 0.5 * dl : dl;
    q.times.push_back(t);
    q.weights.push_back(trap * jac);
  }
  return q;
}

GainResult likelihood_gain(const CalibrationTable& table, const NoiseSchedule& schedule, const Quadrature& quad) {
  GainResult result;
  for (std::size_t i = 0; i < quad.times.size(); ++i) {
    const double t = quad.times[i];
    const double gap = objective_gap(table.param, lookup(table, t), t, schedule);
    const double weighted = drift_diffusion(schedule, t).diffusion2 * gap;
    const double contribution = quad.weights[i] * weighted;
    result.curve.push_back({t, gap, weighted, contribution});
    result.value += contribution;
  }
  return result;
}

Estimate mixture_entropy(const GaussianMixture& mixture, Eigen::Index n, Seed seed) {
  const LabeledPoints pts = sample_data(mixture, n, seed);
  const MarginalMixture q0(mixture, NoiseSchedule::vp_linear(), 0.0);
  return scalar_mean(-q0.log_density(pts.points));
}

BoundResult lemma1_bound(const Model& model, const GaussianMixture& mixture, const NoiseSchedule& schedule,
                         const Quadrature& quad, Eigen::Index n, Seed seed, Eigen::Index kl_n, bool antithetic) {
  BoundResult result;
  for (std::size_t i = 0; i < quad.times.size(); ++i) {
    const double t = quad.times[i];
    const Estimate sm = sm_objective_vs_oracle(model, mixture, schedule, t, n, seed, antithetic);
    result.sm.push_back(sm);
    result.sm_integral += quad.weights[i] * drift_diffusion(schedule, t).diffusion2 * sm.value;
  }
  result.kl = kl_to_prior(mixture, schedule, kl_n, seed.child("kl"));
  result.value = result.sm_integral + result.kl.value;
  return result;
}

namespace {

Eigen::MatrixXd flow_field(const Model& model, const NoiseSchedule& schedule, const Eigen::MatrixXd& x, double t) {
  const auto fg = drift_diffusion(schedule, t);
  return fg.drift * x - 0.5 * fg.diffusion2 * eval_as(model, Parametrization::score, x, t, schedule);
}

// Exact trace of the field's Jacobian by central differences, one column per coordinate.
Eigen::VectorXd flow_divergence(const Model& model, const NoiseSchedule& schedule, const Eigen::MatrixXd& x,
                                double t, double h) {
  Eigen::VectorXd div = Eigen::VectorXd::Zero(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::MatrixXd plus = x, minus = x;
    plus.row(i).array() += h;
    minus.row(i).array() -= h;
    div += ((flow_field(model, schedule, plus, t).row(i) - flow_field(model, schedule, minus, t).row(i)) / (2 * h))
               .transpose();
  }
  return div;
}

}  // namespace

LoglikResult ode_loglik(const Model& model, const NoiseSchedule& schedule, const Eigen::MatrixXd& x0,
                        const LoglikConfig& config) {
  if (x0.rows() != model.dim()) throw ArgumentError("points have the wrong dimension");
  const double t0 = config.t_start.value_or(schedule.t_min());
  TimeGrid grid = make_time_grid(schedule, config.steps, Spacing::uniform_log_snr, t0);
  std::reverse(grid.times.begin(), grid.times.end());
  const double h = config.fd_step;

  LoglikResult r{Eigen::VectorXd(x0.cols()), Eigen::MatrixXd(x0.rows(), x0.cols()), Eigen::VectorXd(x0.cols())};
  parallel::for_chunks(x0.cols(), [&](Eigen::Index, Eigen::Index begin, Eigen::Index end) {
    Eigen::MatrixXd x = x0.middleCols(begin, end - begin);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.cols());
    for (std::size_t i = 0; i + 1 < grid.times.size(); ++i) {
      const double s = grid.times[i], t = grid.times[i + 1], dt = t - s, mid = s + 0.5 * dt;
      const Eigen::MatrixXd k1 = flow_field(model, schedule, x, s);
      const Eigen::MatrixXd x_2 = x + 0.5 * dt * k1;
      const Eigen::MatrixXd k2 = flow_field(model, schedule, x_2, mid);
      const Eigen::MatrixXd x_3 = x + 0.5 * dt * k2;
      const Eigen::MatrixXd k3 = flow_field(model, schedule, x_3, mid);
      const Eigen::MatrixXd x_4 = x + dt * k3;
      const Eigen::MatrixXd k4 = flow_field(model, schedule, x_4, t);
      const Eigen::VectorXd d1 = flow_divergence(model, schedule, x, s, h);
      const Eigen::VectorXd d2 = flow_divergence(model, schedule, x_2, mid, h);
      const Eigen::VectorXd d3 = flow_divergence(model, schedule, x_3, mid, h);
      const Eigen::VectorXd d4 = flow_divergence(model, schedule, x_4, t, h);
      x += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
      acc += dt / 6 * (d1 + 2 * d2 + 2 * d3 + d4);
      if (!x.allFinite() || !acc.allFinite()) throw DivergenceError(static_cast<long>(i), "non-finite ODE state");
    }
    r.x_T.middleCols(begin, end - begin) = x;
    r.divergence_integral.segment(begin, end - begin) = acc;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      r.loglik(begin + j) = log_prior_density(schedule, x.col(j)) + acc(j);
  });
  return r;
}

Eigen::MatrixXd jacobian(const Model& model, const Eigen::VectorXd& x, double t, double h) {
  const Eigen::Index k = x.size();
  Eigen::MatrixXd pts = x.replicate(1, 2 * k);
  for (Eigen::Index i = 0; i < k; ++i) {
    pts(i, i) += h;
    pts(i, k + i) -= h;
  }
  const Eigen::MatrixXd out = model.eval(pts, t);
  return (out.leftCols(k) - out.rightCols(k)) / (2 * h);
}

Eigen::MatrixXd score_jacobian(const Model& model, const NoiseSchedule& schedule, const Eigen::VectorXd& x, double t,
                               double h) {
  const Eigen::Index k = x.size();
  Eigen::MatrixXd pts = x.replicate(1, 2 * k);
  for (Eigen::Index i = 0; i < k; ++i) {
    pts(i, i) += h;
    pts(i, k + i) -= h;
  }
  const Eigen::MatrixXd out = eval_as(model, Parametrization::score, pts, t, schedule);
  return (out.leftCols(k) - out.rightCols(k)) / (2 * h);
}

double conservativeness_check(const Model& model, const NoiseSchedule& schedule, const Eigen::MatrixXd& points,
                              double t, double h) {
  double worst = 0;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const Eigen::MatrixXd J = score_jacobian(model, schedule, points.col(j), t, h);
    worst = std::max(worst, (J - J.transpose()).cwiseAbs().maxCoeff());
  }
  return worst;
}

std::vector<NoiseRow> expected_noise_export(const Model& model, const DataSource& source,
                                            const NoiseSchedule& schedule, const std::vector<double>& times,
                                            Eigen::Index n, Seed seed,
                                            const std::optional<std::filesystem::path>& path) {
  std::vector<NoiseRow> rows;
  for (double t : times) {
    const ForwardDraws d = draw_forward(source, schedule, t, n, seed);
    const Eigen::MatrixXd eps =
        convert(eval_chunked(model, d.xt, t), model.parametrization(), Parametrization::noise, d.xt, t, schedule);
    const VectorEstimate m = column_mean(eps);
    const double sq = m.mean.squaredNorm();
    rows.push_back({t, m.mean, m.se, 0.5 * sq, drift_diffusion(schedule, t).diffusion2 / (2 * schedule.sigma2(t)) * sq});
  }
  if (path) {
    std::ofstream out(*path);
    if (!out) throw Error("cannot write " + path->string());
    out << "t";
    for (Eigen::Index i = 1; i <= model.dim(); ++i) out << ",v" << i;
    out << ",se,half_norm2,weighted\n";
    for (const auto& r : rows) {
      out << format_double(r.t);
      for (double v : r.mean) out << ',' << format_double(v);
      out << ',' << format_double(r.se) << ',' << format_double(r.half_norm2) << ',' << format_double(r.weighted)
          << '\n';
    }
  }
  return rows;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

bool rank_deficient(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() <= 1e-14 * std::max(1.0, cov.trace());
}

}  // namespace

double frechet_gaussian(const Eigen::VectorXd& mean_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mean_b,
                        const Eigen::MatrixXd& cov_b, bool* regularized) {
  Eigen::MatrixXd A = cov_a, B = cov_b;
  bool reg = false;
  for (Eigen::MatrixXd* c : {&A, &B}) {
    if (rank_deficient(*c)) {
      c->diagonal().array() += 1e-10;
      reg = true;
    }
  }
  if (regularized) *regularized = reg;
  const Eigen::MatrixXd root_a = psd_sqrt(A);
  const double cross = psd_sqrt(root_a * B * root_a).trace();
  return std::max(0.0, (mean_a - mean_b).squaredNorm() + A.trace() + B.trace() - 2 * cross);
}

double frechet_gaussian(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, bool* regularized) {
  if (a.rows() != b.rows()) throw ArgumentError("sample sets have different dimensions");
  if (a.cols() < a.rows() + 1 || b.cols() < b.rows() + 1) throw ArgumentError("need at least k + 1 samples");
  auto moments = [](const Eigen::MatrixXd& x) {
    const Eigen::VectorXd mu = x.rowwise().mean();
    const Eigen::MatrixXd c = x.colwise() - mu;
    return std::pair{mu, Eigen::MatrixXd(c * c.transpose() / static_cast<double>(x.cols() - 1))};
  };
  const auto [ma, ca] = moments(a);
  const auto [mb, cb] = moments(b);
  return frechet_gaussian(ma, ca, mb, cb, regularized);
}

void EvalReport::add_curve(const std::string& name, std::vector<std::string> columns,
                           std::vector<std::vector<double>> rows) {
  curves_[name] = Curve{std::move(columns), std::move(rows)};
}

bool EvalReport::passed() const {
  return std::all_of(records_.begin(), records_.end(), [](const Record& r) { return r.pass.value_or(true); });
}

std::string EvalReport::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) {
    nlohmann::ordered_json j;
    j["name"] = r.name;
    j["value"] = r.value;
    if (r.se) j["se"] = *r.se;
    if (r.pass) j["pass"] = *r.pass;
    if (!r.detail.empty()) j["detail"] = r.detail;
    out += j.dump() + "\n";
  }
  return out;
}

void EvalReport::write(const std::filesystem::path& dir, const std::string& config_hash) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.jsonl");
    nlohmann::ordered_json head;
    head["config_hash"] = config_hash;
    head["passed"] = passed();
    out << head.dump() << "\n" << to_jsonl();
    if (!out) throw Error("cannot write report");
  }
  for (const auto& [name, curve] : curves_) {
    std::ofstream out(dir / ("curve_" + name + ".csv"));
    out << "# config_hash " << config_hash << "\n";
    for (std::size_t i = 0; i < curve.columns.size(); ++i) out << (i ? "," : "") << curve.columns[i];
    out << "\n";
    for (const auto& row : curve.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
      out << "\n";
    }
    if (!out) throw Error("cannot write curve " + name);
  }
}

void write_samples_csv(const std::filesystem::path& path, const Eigen::MatrixXd& samples,
                       const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  if (!config_hash.empty()) out << "# config_hash " << config_hash << "\n";
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    for (Eigen::Index i = 0; i < samples.rows(); ++i) out << (i ? "," : "") << format_double(samples(i, j));
    out << "\n";
  }
  if (!out) throw Error("failed writing " + path.string());
}

Eigen::MatrixXd read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError(line_no, "not a number: '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw ParseError(line_no, "ragged sample row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(line_no, "no samples");
  Eigen::MatrixXd out(rows.front().size(), rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t i = 0; i < rows[j].size(); ++i) out(i, j) = rows[j][i];
  return out;
}

}  // namespace caldpm
