#include "caldpm/commands.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "caldpm/calibrate.hpp"
#include "caldpm/evaluate.hpp"
#include "caldpm/parallel.hpp"
#include "caldpm/sample.hpp"

namespace caldpm {

namespace {

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return hex(fnv1a(buf.str()));
}

std::filesystem::path checkpoint_path(const RunConfig& config, const CommandPaths& paths) {
  if (paths.checkpoint) return *paths.checkpoint;
  if (config.model.checkpoint) return *config.model.checkpoint;
  throw ConfigError("model.checkpoint", "a network model needs a checkpoint");
}

bool uses_net(const RunConfig& config, const CommandPaths& paths) {
  return config.model.kind == "net" || paths.checkpoint.has_value();
}

std::string model_hash(const RunConfig& config, const CommandPaths& paths) {
  if (uses_net(config, paths)) return file_hash(checkpoint_path(config, paths));
  return config.hash();
}

CalibrationTable load_checked_table(const RunConfig& config, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("--table", "file '" + path.string() + "' does not exist");
  CalibrationTable table = load_table(path);
  if (!(table.schedule == config.schedule))
    throw ConfigError("--table", "table schedule '" + to_text(table.schedule) + "' does not match the config schedule '" +
                                     to_text(config.schedule) + "'");
  return table;
}

ModelPtr with_table(const RunConfig& config, const CommandPaths& paths, ModelPtr model) {
  if (!paths.table) return model;
  return caldpm::apply(std::move(model), load_checked_table(config, *paths.table));
}

DataSource training_source(const RunConfig& config, Eigen::Index size) {
  const GaussianMixture& mix = config.require_mixture();
  if (size == 0) return DataSource::from_mixture(mix);
  LabeledPoints pts = sample_data(mix, size, Seed(config.seed).child("dataset"));
  return DataSource::from_points(std::move(pts.points), std::move(pts.labels));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

ModelPtr build_model(const RunConfig& config, const CommandPaths& paths) {
  ModelPtr model;
  if (uses_net(config, paths)) {
    const auto path = checkpoint_path(config, paths);
    if (!std::filesystem::exists(path)) throw ConfigError("model.checkpoint", "file '" + path.string() + "' does not exist");
    Checkpoint ck = load_checkpoint(path);
    if (!(ck.schedule == config.schedule)) throw ConfigError("model.checkpoint", "checkpoint schedule differs from config");
    model = std::make_shared<NetModel>(ck.config, ck.params);
  } else {
    model = std::make_shared<OracleModel>(config.require_mixture(), config.schedule, config.model.param);
  }
  if (config.model.bias) {
    if (config.model.bias->size() != model->dim()) throw ConfigError("model.bias", "must have dim entries");
    model = std::make_shared<BiasedModel>(model, *config.model.bias);
  }
  return model;
}

int cmd_train(const RunConfig& config, std::ostream& log) {
  const GaussianMixture& mix = config.require_mixture();
  NetConfig net = config.net;
  net.dim = mix.dim();
  const DataSource source = training_source(config, config.train.data_size);
  RecorderConfig recorder;
  recorder.dim = mix.dim();
  const TrainResult result = train(init_params(net, Seed(config.seed).child("init")), net, config.schedule, source,
                                   config.train.train, config.train.train.joint_recorder ? &recorder : nullptr);

  std::filesystem::create_directories(config.out);
  save_checkpoint(config.out / "checkpoint.bin", {net, config.schedule, result.params, config.seed, config.hash()});
  std::ostringstream csv;
  csv << "# config_hash " << config.hash() << "\nstep,loss" << (result.recorder ? ",recorder_loss" : "") << "\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) {
    csv << i << ',' << format_double(result.losses[i]);
    if (result.recorder) csv << ',' << format_double(result.recorder_losses[i]);
    csv << '\n';
  }
  write_text(config.out / "loss.csv", csv.str());
  log << "trained " << result.losses.size() << " steps, final loss "
      << (result.losses.empty() ? 0.0 : result.losses.back()) << "\n";
  return kExitOk;
}

int cmd_calibrate(const RunConfig& config, const CommandPaths& paths, std::ostream& log) {
  const ModelPtr model = build_model(config, paths);
  const auto& cal = config.calibration;

  std::optional<DataSource> source;
  std::string provenance;
  if (cal.source == "generated-data") {
    const Trajectory traj = sample(*model, config.schedule, config.sampler.config, cal.n);
    source = DataSource::from_points(traj.samples());
    const auto& s = config.sampler.config;
    provenance = "generated-data n=" + std::to_string(cal.n) + " sampler=" + std::string(to_string(s.kind)) +
                 " order=" + std::to_string(s.order) + " nfe=" + std::to_string(s.nfe);
  } else {
    source = training_source(config, cal.partial);
    provenance = "training-data n=" + std::to_string(cal.partial ? cal.partial : cal.n);
  }

  std::vector<double> times;
  if (cal.grid == "quadrature")
    times = make_quadrature(config.schedule, config.evaluate.quadrature_points).times;
  else
    times = evaluation_times(config.schedule, config.sampler.config);
  if (times.empty()) throw ConfigError("sampler.nfe", "sampler grid is empty; nothing to calibrate");

  EstimateOptions options;
  options.antithetic = cal.antithetic;
  options.provenance = provenance;
  CalibrationTable table =
      estimate_table(*model, *source, config.schedule, times, cal.n, Seed(config.seed).child("calibrate"), options);
  table.config_hash = config.hash();

  std::filesystem::create_directories(config.out);
  save_table(table, config.out / "table.csv");
  double worst = 0;
  for (const auto& e : table.entries) worst = std::max(worst, e.value.norm());
  log << "calibration table: " << table.entries.size() << " times, max |eta| " << worst << "\n";
  return kExitOk;
}

int cmd_sample(const RunConfig& config, const CommandPaths& paths, std::ostream& log) {
  const ModelPtr model = with_table(config, paths, build_model(config, paths));
  const Trajectory traj = sample(*model, config.schedule, config.sampler.config, config.sampler.n);

  std::filesystem::create_directories(config.out);
  write_samples_csv(config.out / "samples.csv", traj.samples(), config.hash());
  nlohmann::ordered_json manifest;
  manifest["config_hash"] = config.hash();
  manifest["config"] = config.canonical();
  manifest["seed"] = config.seed;
  manifest["nfe"] = config.sampler.config.nfe;
  manifest["evaluations"] = traj.evaluations;
  manifest["model_hash"] = model_hash(config, paths);
  manifest["table_hash"] = paths.table ? file_hash(*paths.table) : std::string();
  write_text(config.out / "manifest.json", manifest.dump(2) + "\n");
  log << "wrote " << traj.samples().cols() << " samples (" << traj.evaluations << " model evaluations)\n";
  return kExitOk;
}

int cmd_evaluate(const RunConfig& config, const CommandPaths& paths, std::ostream& log) {
  const GaussianMixture& mix = config.require_mixture();
  const ModelPtr model = with_table(config, paths, build_model(config, paths));
  const NoiseSchedule& sc = config.schedule;
  const auto& ev = config.evaluate;
  const Seed seed = Seed(config.seed).child("evaluate");
  const DataSource data = DataSource::from_mixture(mix);
  std::optional<CalibrationTable> table;
  if (paths.table) table = load_checked_table(config, *paths.table);
  // A calibrated model is only defined on the table's time range.
  double lo = sc.t_min(), hi = sc.horizon();
  if (table) {
    const std::vector<double> tt = table->times();
    lo = std::max(lo, tt.front());
    hi = std::min(hi, tt.back());
  }
  EvalReport report;

  const Eigen::Index n_fid = std::max<Eigen::Index>(config.sampler.n, mix.dim() + 1);
  const Eigen::MatrixXd reference = sample_data(mix, n_fid, seed.child("reference")).points;
  const Eigen::MatrixXd generated = sample(*model, sc, config.sampler.config, n_fid).samples();
  bool reg = false;
  report.add({"frechet_gaussian", frechet_gaussian(generated, reference, &reg), std::nullopt, std::nullopt,
              reg ? "covariance regularized with 1e-10 I" : ""});

  std::vector<std::vector<double>> sm_rows;
  for (double t : make_time_grid(sc, std::max(1, ev.times - 1), Spacing::uniform_log_snr, lo).times) {
    if (t > hi) continue;
    const Estimate sm = sm_objective_vs_oracle(*model, mix, sc, t, ev.n, seed.child("sm"));
    sm_rows.push_back({t, sm.value, sm.se});
  }
  report.add_curve("sm_objective", {"t", "value", "se"}, sm_rows);

  const Quadrature quad = make_quadrature(sc, ev.quadrature_points);
  std::vector<double> noise_times;
  for (double t : quad.times)
    if (t >= lo && t <= hi) noise_times.push_back(t);
  std::vector<std::vector<double>> noise_rows;
  for (const auto& r : expected_noise_export(*model, data, sc, noise_times, ev.n, seed.child("noise"))) {
    std::vector<double> row{r.t};
    row.insert(row.end(), r.mean.begin(), r.mean.end());
    row.insert(row.end(), {r.se, r.half_norm2, r.weighted});
    noise_rows.push_back(row);
  }
  std::vector<std::string> noise_cols{"t"};
  for (Eigen::Index i = 1; i <= mix.dim(); ++i) noise_cols.push_back("v" + std::to_string(i));
  noise_cols.insert(noise_cols.end(), {"se", "half_norm2", "weighted"});
  report.add_curve("expected_noise", noise_cols, noise_rows);

  const std::string range = "over [" + format_double(lo) + ", " + format_double(hi) + "]";
  const bool narrowed = lo > sc.t_min() || hi < sc.horizon();
  if (hi < sc.horizon()) {
    report.add({"ode_nll", 0.0, std::nullopt, std::nullopt, "not computed: table does not reach T"});
  } else {
    LoglikConfig lc;
    lc.t_start = lo;
    const Eigen::MatrixXd pts = sample_data(mix, ev.loglik_n, seed.child("loglik")).points;
    const Estimate nll = scalar_mean(-ode_loglik(*model, sc, pts, lc).loglik);
    std::string detail = "mean negative log-likelihood of data points";
    if (narrowed) detail += ", flow started at t = " + format_double(lo);
    report.add({"ode_nll", nll.value, nll.se, std::nullopt, detail});
  }
  const Estimate entropy = mixture_entropy(mix, ev.n, seed.child("entropy"));
  report.add({"data_entropy", entropy.value, entropy.se, std::nullopt, ""});

  if (table) {
    const Quadrature gain_quad = narrowed ? make_quadrature(sc, ev.quadrature_points, lo, hi) : quad;
    const GainResult gain = likelihood_gain(*table, sc, gain_quad);
    report.add({"likelihood_gain", gain.value, std::nullopt, std::nullopt, narrowed ? range : ""});
    std::vector<std::vector<double>> rows;
    for (const auto& r : gain.curve) rows.push_back({r.t, r.gap, r.weighted, r.contribution});
    report.add_curve("likelihood_gain", {"t", "gap", "weighted", "contribution"}, rows);
  }

  report.write(config.out / "evaluate", config.hash());
  for (const auto& r : report.records()) log << r.name << " = " << r.value << (r.detail.empty() ? "" : "  (" + r.detail + ")") << "\n";
  return kExitOk;
}

namespace {

// Relative difference with an absolute floor for values near zero.
double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace

int cmd_verify(const RunConfig& config, const CommandPaths& paths, std::ostream& log) {
  const GaussianMixture& mix = config.require_mixture();
  const NoiseSchedule& sc = config.schedule;
  const auto& ev = config.evaluate;
  const Seed seed = Seed(config.seed).child("verify");
  const DataSource data = DataSource::from_mixture(mix);
  std::optional<CalibrationTable> user_table;
  if (paths.table) user_table = load_checked_table(config, *paths.table);
  if (user_table && user_table->dim != mix.dim()) throw ConfigError("--table", "table dimension differs from mixture");
  EvalReport report;

  // Zero-mean law of the oracle score.
  const std::vector<double> times =
      make_time_grid(sc, std::max(1, ev.times - 1), Spacing::uniform_log_snr, sc.t_min()).times;
  {
    std::vector<std::vector<double>> rows;
    bool pass = true;
    double worst = 0;
    for (const auto& r : zero_mean_check(mix, sc, times, ev.n, seed.child("zero-mean"))) {
      rows.push_back({r.t, r.norm, r.se});
      pass = pass && r.pass;
      worst = std::max(worst, r.se > 0 ? r.norm / r.se : 0.0);
    }
    report.add({"zero_mean_max_z", worst, std::nullopt, pass, "||mean score|| <= 3 se at every t"});
    report.add_curve("zero_mean", {"t", "norm", "se"}, rows);
  }

  // Martingale property.
  {
    const double T = sc.horizon();
    const std::vector<std::pair<double, double>> pairs{{0.1 * T, 0.2 * T}, {0.3 * T, 0.5 * T}, {0.6 * T, 0.9 * T}};
    double worst = 0;
    for (const auto& r : martingale_check(mix, sc, pairs, ev.martingale_outer, ev.martingale_inner, seed.child("mart")))
      worst = std::max(worst, r.max_z);
    report.add({"martingale_max_z", worst, std::nullopt, worst <= 4.0, "nested MC discrepancy <= 4 se"});
    const GaussianMixture g = GaussianMixture::gaussian(mix[0].mean, mix[0].cov);
    const Eigen::MatrixXd xt = draw_forward(DataSource::from_mixture(g), sc, 0.5 * T, 100, seed.child("closed")).xt;
    double closed = 0;
    for (const auto& [s, t] : pairs) closed = std::max(closed, martingale_closed_form(g, sc, s, t, xt));
    report.add({"martingale_closed_form", closed, std::nullopt, closed <= 1e-10, "single Gaussian, exact"});
  }

  // Gap identity and bias recovery on a biased oracle.
  Eigen::VectorXd bias = config.model.bias.value_or(Eigen::VectorXd::Zero(mix.dim()));
  if (!config.model.bias) bias(0) = 0.5;
  const std::vector<double> id_times{0.05 * sc.horizon(), 0.3 * sc.horizon(), 0.8 * sc.horizon()};
  const Eigen::Index n_id = ev.n + ev.n % 2;
  {
    double worst = 0;
    std::vector<Parametrization> params{Parametrization::score, Parametrization::noise, Parametrization::data};
    if (sc.kind() == ScheduleKind::vp_linear) params.push_back(Parametrization::velocity);
    for (Parametrization p : params) {
      auto base = std::make_shared<BiasedModel>(std::make_shared<OracleModel>(mix, sc, p), bias);
      EstimateOptions opt;
      opt.antithetic = true;
      const Seed s = seed.child("gap").child(static_cast<std::uint64_t>(p));
      const CalibrationTable table = estimate_table(*base, data, sc, id_times, n_id, s, opt);
      const auto calibrated = caldpm::apply(base, table);
      for (const auto& e : table.entries) {
        const double drop = dsm_objective(*base, data, sc, e.t, n_id, s, true).value -
                            dsm_objective(*calibrated, data, sc, e.t, n_id, s, true).value;
        worst = std::max(worst, rel_diff(drop, objective_gap(p, e.value, e.t, sc)));
      }
    }
    report.add({"gap_identity_max_rel", worst, std::nullopt, worst <= 1e-9, "DSM(base) - DSM(calibrated) = gap"});
  }
  {
    auto base = std::make_shared<BiasedModel>(std::make_shared<OracleModel>(mix, sc, Parametrization::score), bias);
    const CalibrationTable table = estimate_table(*base, data, sc, id_times, ev.n, seed.child("bias"));
    double worst = 0;
    for (const auto& e : table.entries) worst = std::max(worst, (e.value - bias).norm() / e.se);
    report.add({"bias_recovery_max_z", worst, std::nullopt, worst <= 3.0, "||eta - b|| <= 3 se"});
    const auto calibrated = caldpm::apply(base, table);
    const CalibrationTable again = estimate_table(*calibrated, data, sc, id_times, ev.n, seed.child("bias"));
    double resid = 0;
    for (const auto& e : again.entries) resid = std::max(resid, e.value.cwiseAbs().maxCoeff());
    report.add({"recalibration_residual", resid, std::nullopt, resid <= 1e-12 * (1 + bias.norm()),
                "re-estimated table on the calibrated model"});
  }

  // Likelihood gain and the Lemma 1 decomposition.
  {
    const Quadrature q = make_quadrature(sc, ev.quadrature_points);
    const Quadrature fine = make_quadrature(sc, 10 * ev.quadrature_points);
    auto base = std::make_shared<BiasedModel>(std::make_shared<OracleModel>(mix, sc, Parametrization::noise), bias);
    EstimateOptions opt;
    opt.control = &mix;
    const Eigen::Index n_q = std::max<Eigen::Index>(ev.n / 10, 2);
    const CalibrationTable table = estimate_table(*base, data, sc, q.times, n_q, seed.child("gain"), opt);
    const double gain = likelihood_gain(table, sc, q).value;
    const double gain_fine = likelihood_gain(table, sc, fine).value;
    report.add({"likelihood_gain", gain, std::nullopt, rel_diff(gain, gain_fine) <= 1e-3,
                "64-point vs 640-point quadrature within 1e-3"});
    const auto calibrated = caldpm::apply(base, table);
    const BoundResult b0 = lemma1_bound(*base, mix, sc, q, n_q, seed.child("gain"), n_q);
    const BoundResult b1 = lemma1_bound(*calibrated, mix, sc, q, n_q, seed.child("gain"), n_q);
    const double mismatch = rel_diff(b0.value - b1.value, gain);
    report.add({"lemma1_bound_base", b0.value, std::nullopt, std::nullopt, ""});
    report.add({"lemma1_bound_calibrated", b1.value, std::nullopt, std::nullopt, ""});
    report.add({"lemma1_gain_mismatch", mismatch, std::nullopt, mismatch <= 1e-9,
                "bound(base) - bound(calibrated) = gain"});
    if (user_table) {
      try {
        report.add({"table_likelihood_gain", likelihood_gain(*user_table, sc, q).value, std::nullopt, std::nullopt, ""});
      } catch (const RangeError& e) {
        report.add({"table_likelihood_gain", 0.0, std::nullopt, std::nullopt, std::string("not computed: ") + e.what()});
      }
    }
  }

  // Conservativeness and Jacobian invariance.
  {
    const OracleModel oracle(mix, sc, Parametrization::score);
    const Eigen::MatrixXd pts = draw_forward(data, sc, 0.5 * sc.horizon(), 20, seed.child("jac")).xt;
    const double asym = conservativeness_check(oracle, sc, pts, 0.5 * sc.horizon());
    report.add({"oracle_jacobian_asymmetry", asym, std::nullopt, asym <= 1e-4, "finite differences"});
    auto base = std::make_shared<BiasedModel>(std::make_shared<OracleModel>(mix, sc, Parametrization::noise), bias);
    const auto calibrated = caldpm::apply(base, zero_table(sc, Parametrization::noise, mix.dim(), {sc.t_min(), sc.horizon()}));
    auto shifted = CalibrationTable(calibrated->table());
    for (auto& e : shifted.entries) e.value = bias;
    shifted.provenance = "constant";
    const auto cal2 = caldpm::apply(base, shifted);
    double worst = 0;
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
      const double t = 0.1 + 0.8 * static_cast<double>(j) / pts.cols();
      worst = std::max(worst, (jacobian(*base, pts.col(j), t) - jacobian(*cal2, pts.col(j), t)).cwiseAbs().maxCoeff());
    }
    report.add({"jacobian_invariance", worst, std::nullopt, worst <= 1e-10, "calibrated vs base"});
  }

  // Concentration inequalities.
  {
    const std::vector<double> grid = discrete_times(sc, ev.concentration_steps);
    const ConcentrationReport cr =
        concentration_check(mix, sc, grid, 0, {0.5, 1.0, 2.0}, {0.5, 1.0, 2.0}, ev.concentration_n, seed.child("conc"));
    std::vector<std::vector<double>> rows;
    for (const auto& r : cr.rows) {
      report.add({r.kind + "_" + format_double(r.level), r.frequency, std::nullopt, r.pass,
                  "bound " + format_double(r.bound)});
      rows.push_back({r.kind == "azuma" ? 0.0 : 1.0, r.level, r.frequency, r.bound});
    }
    report.add_curve("concentration", {"kind", "level", "frequency", "bound"}, rows);
    report.add({"concentration_caveat", cr.sum_c2, std::nullopt, std::nullopt, cr.caveat});
  }

  report.write(config.out / "verify", config.hash());
  for (const auto& r : report.records())
    log << (r.pass ? (*r.pass ? "PASS " : "FAIL ") : "     ") << r.name << " = " << r.value << "\n";
  return report.passed() ? kExitOk : kExitCheckFailed;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"caldpm: calibration lab for diffusion models on Gaussian-mixture data"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_dir, checkpoint, table;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  app.add_option("--config", config_path, "JSON run config")->required();
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--workers", workers, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--checkpoint", checkpoint, "network checkpoint (implies model.kind = net)");
  app.add_option("--table", table, "calibration table to apply");
  app.add_subcommand("train", "fit the score network, write checkpoint.bin and loss.csv");
  app.add_subcommand("calibrate", "estimate the calibration table, write table.csv");
  app.add_subcommand("sample", "run the sampler, write samples.csv and manifest.json");
  app.add_subcommand("evaluate", "score objectives, likelihood and sample quality");
  app.add_subcommand("verify", "zero-mean, martingale and concentration checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  }

  try {
    RunConfig config = load_config(config_path);
    if (seed) config.set_seed(*seed);
    if (workers) config.workers = *workers;
    if (!out_dir.empty()) config.out = out_dir;
    parallel::set_workers(config.workers);
    CommandPaths paths;
    if (!checkpoint.empty()) paths.checkpoint = checkpoint;
    if (!table.empty()) paths.table = table;

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "train") return cmd_train(config, out);
    if (cmd == "calibrate") return cmd_calibrate(config, paths, out);
    if (cmd == "sample") return cmd_sample(config, paths, out);
    if (cmd == "evaluate") return cmd_evaluate(config, paths, out);
    return cmd_verify(config, paths, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace caldpm
