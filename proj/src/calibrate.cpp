#include "caldpm/calibrate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "caldpm/stats.hpp"

namespace caldpm {

namespace {

constexpr double kTimeTol = 1e-9;
constexpr int kTableVersion = 1;

// Sort key: unconditional entries use label -1.
int label_key(const TableEntry& e) { return e.label.value_or(-1); }

}  // namespace

bool operator==(const TableEntry& a, const TableEntry& b) {
  return a.t == b.t && a.se == b.se && a.label == b.label && a.value.size() == b.value.size() &&
         a.value == b.value;
}

bool operator==(const CalibrationTable& a, const CalibrationTable& b) {
  return a.schedule == b.schedule && a.param == b.param && a.dim == b.dim && a.provenance == b.provenance &&
         a.config_hash == b.config_hash && a.entries == b.entries;
}

std::vector<int> CalibrationTable::labels() const {
  std::vector<int> out;
  for (const auto& e : entries)
    if (e.label && (out.empty() || out.back() != *e.label)) out.push_back(*e.label);
  return out;
}

std::vector<double> CalibrationTable::times(std::optional<int> label) const {
  std::vector<double> out;
  for (const auto& e : entries)
    if (e.label == label) out.push_back(e.t);
  return out;
}

void CalibrationTable::validate() const {
  if (dim < 1) throw ArgumentError("table dimension must be positive");
  if (provenance.empty()) throw ArgumentError("table provenance is empty");
  if (entries.empty()) throw ArgumentError("table has no entries");
  const bool cond = conditional();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.label.has_value() != cond) throw ArgumentError("table mixes conditional and unconditional entries");
    if (e.value.size() != dim) throw ArgumentError("table entry has the wrong dimension");
    if (!e.value.allFinite() || !std::isfinite(e.se) || e.se < 0) throw ArgumentError("table entry is not finite");
    if (!(e.t >= schedule.t_min() - kTimeTol && e.t <= schedule.horizon()))
      throw ArgumentError("table time outside [t_min, T]");
    if (i > 0) {
      const auto& p = entries[i - 1];
      if (label_key(p) > label_key(e) || (label_key(p) == label_key(e) && !(p.t < e.t)))
        throw ArgumentError("table entries are not sorted by (label, t)");
    }
  }
}

CalibrationTable zero_table(const NoiseSchedule& schedule, Parametrization param, Eigen::Index dim,
                            const std::vector<double>& times) {
  CalibrationTable table{schedule, param, dim, "zero", "", {}};
  std::vector<double> sorted = times;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (double t : sorted) table.entries.push_back({t, Eigen::VectorXd::Zero(dim), 0.0, std::nullopt});
  return table;
}

namespace {

std::vector<double> sorted_unique(std::vector<double> times) {
  if (times.empty()) throw ArgumentError("calibration needs at least one time");
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  return times;
}

// Per-sample values whose mean is eta: model output minus its x_0-dependent
// reference (data: x_0; velocity: -sigma x_0), or minus the oracle.
Eigen::MatrixXd calibration_samples(const Model& model, const ForwardDraws& d, const NoiseSchedule& schedule,
                                    const EstimateOptions& options, const Eigen::VectorXi* labels) {
  Eigen::MatrixXd out = labels ? eval_chunked(model, d.xt, d.t, *labels) : eval_chunked(model, d.xt, d.t);
  if (options.control) {
    const OracleModel oracle(*options.control, schedule, model.parametrization());
    out -= labels ? eval_chunked(oracle, d.xt, d.t, *labels) : eval_chunked(oracle, d.xt, d.t);
    return out;
  }
  switch (model.parametrization()) {
    case Parametrization::data: out -= d.x0; break;
    case Parametrization::velocity: out += schedule.sigma(d.t) * d.x0; break;
    default: break;
  }
  return out;
}

std::string default_provenance(const DataSource& source, Eigen::Index n) {
  return std::string(source.mixture() ? "training-data" : "dataset") + " n=" + std::to_string(n);
}

}  // namespace

CalibrationTable estimate_table(const Model& model, const DataSource& source, const NoiseSchedule& schedule,
                                const std::vector<double>& times, Eigen::Index n, Seed seed,
                                const EstimateOptions& options) {
  if (n < 1) throw ArgumentError("calibration needs n >= 1");
  if (source.dim() != model.dim()) throw ArgumentError("data dimension does not match the model");
  CalibrationTable table{schedule, model.parametrization(), model.dim(),
                         options.provenance.empty() ? default_provenance(source, n) : options.provenance, "", {}};
  for (double t : sorted_unique(times)) {
    const ForwardDraws d = draw_forward(source, schedule, t, n, seed, options.antithetic);
    const VectorEstimate m = column_mean(calibration_samples(model, d, schedule, options, nullptr));
    table.entries.push_back({t, m.mean, m.se, std::nullopt});
  }
  return table;
}

CalibrationTable estimate_conditional(const Model& model, const GaussianMixture& mixture,
                                      const NoiseSchedule& schedule, const std::vector<double>& times,
                                      Eigen::Index n, Seed seed, const EstimateOptions& options) {
  if (n < 1) throw ArgumentError("calibration needs n >= 1");
  if (mixture.dim() != model.dim()) throw ArgumentError("data dimension does not match the model");
  const DataSource source = DataSource::from_mixture(mixture);
  CalibrationTable table{schedule, model.parametrization(), model.dim(),
                         options.provenance.empty() ? "training-data n=" + std::to_string(n) + " conditional"
                                                    : options.provenance,
                         "", {}};
  const std::vector<double> grid = sorted_unique(times);
  std::vector<std::vector<TableEntry>> per_label(mixture.size());
  for (double t : grid) {
    const ForwardDraws d = draw_forward(source, schedule, t, n, seed, options.antithetic);
    const Eigen::MatrixXd samples = calibration_samples(model, d, schedule, options, &d.labels);
    for (int y = 0; y < mixture.size(); ++y) {
      std::vector<Eigen::Index> cols;
      for (Eigen::Index j = 0; j < n; ++j)
        if (d.labels(j) == y) cols.push_back(j);
      if (cols.empty()) {
        if (mixture[y].weight == 0) continue;
        throw EstimationError("label " + std::to_string(y) + " absent from the sample at t = " + std::to_string(t));
      }
      const VectorEstimate m = column_mean(samples(Eigen::all, cols));
      per_label[y].push_back({t, m.mean, m.se, y});
    }
  }
  for (auto& entries : per_label) table.entries.insert(table.entries.end(), entries.begin(), entries.end());
  return table;
}

Eigen::VectorXd lookup(const CalibrationTable& table, double t, std::optional<int> label) {
  if (label.has_value() != table.conditional())
    throw ArgumentError(table.conditional() ? "conditional table needs a label" : "table is unconditional");
  const auto key = label.value_or(-1);
  const auto first = std::partition_point(table.entries.begin(), table.entries.end(),
                                          [&](const TableEntry& e) { return label_key(e) < key; });
  const auto last = std::partition_point(first, table.entries.end(),
                                         [&](const TableEntry& e) { return label_key(e) == key; });
  if (first == last) throw RangeError("no table entries for label " + std::to_string(key));
  if (t < first->t - kTimeTol || t > std::prev(last)->t + kTimeTol)
    throw RangeError("t = " + std::to_string(t) + " outside the calibrated range");

  auto hi = std::partition_point(first, last, [&](const TableEntry& e) { return e.t < t; });
  if (hi != last && std::abs(hi->t - t) <= kTimeTol) return hi->value;
  if (hi != first && std::abs(std::prev(hi)->t - t) <= kTimeTol) return std::prev(hi)->value;
  const auto lo = std::prev(hi);
  const double w = (t - lo->t) / (hi->t - lo->t);
  return (1 - w) * lo->value + w * hi->value;
}

CalibratedModel::CalibratedModel(ModelPtr base, CalibrationTable table)
    : base_(std::move(base)), table_(std::move(table)) {
  if (!base_) throw ArgumentError("calibrated model needs a base model");
  if (table_.param != base_->parametrization())
    throw ConfigError("parametrization", "table is '" + std::string(to_string(table_.param)) + "' but model is '" +
                                             std::string(to_string(base_->parametrization())) + "'");
  if (table_.dim != base_->dim()) throw ConfigError("dim", "table and model dimensions differ");
  table_.validate();
}

Eigen::MatrixXd CalibratedModel::eval(const Eigen::MatrixXd& x, double t) const {
  if (table_.conditional()) throw ArgumentError("conditional table needs labels");
  return base_->eval(x, t).colwise() - lookup(table_, t);
}

Eigen::MatrixXd CalibratedModel::eval(const Eigen::MatrixXd& x, double t, const Eigen::VectorXi& labels) const {
  if (!table_.conditional()) return base_->eval(x, t, labels).colwise() - lookup(table_, t);
  Eigen::MatrixXd out = base_->eval(x, t, labels);
  std::map<int, Eigen::VectorXd> cache;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    auto it = cache.find(labels(j));
    if (it == cache.end()) it = cache.emplace(labels(j), lookup(table_, t, labels(j))).first;
    out.col(j) -= it->second;
  }
  return out;
}

std::shared_ptr<CalibratedModel> apply(ModelPtr model, CalibrationTable table) {
  return std::make_shared<CalibratedModel>(std::move(model), std::move(table));
}

namespace {

std::string format17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_number(std::size_t line, std::string_view text) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ParseError(line, "not a number: '" + std::string(text) + "'");
  return v;
}

}  // namespace

std::string to_text(const CalibrationTable& table) {
  table.validate();
  std::string out;
  out += "version " + std::to_string(kTableVersion) + "\n";
  out += "schedule " + to_text(table.schedule) + "\n";
  out += "parametrization " + std::string(to_string(table.param)) + "\n";
  out += "dim " + std::to_string(table.dim) + "\n";
  out += "provenance " + table.provenance + "\n";
  out += "config_hash " + table.config_hash + "\n";
  out += "conditional " + std::string(table.conditional() ? "1" : "0") + "\n";
  out += "rows " + std::to_string(table.entries.size()) + "\n";
  out += "t,se";
  for (Eigen::Index i = 1; i <= table.dim; ++i) out += ",v" + std::to_string(i);
  if (table.conditional()) out += ",label";
  out += "\n";
  for (const auto& e : table.entries) {
    out += format17(e.t) + "," + format17(e.se);
    for (double v : e.value) out += "," + format17(v);
    if (e.label) out += "," + std::to_string(*e.label);
    out += "\n";
  }
  return out;
}

CalibrationTable parse_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw ParseError(line_no + 1, std::string("unexpected end of file, expected ") + what);
    ++line_no;
    return line;
  };
  auto field = [&](const std::string& key) {
    const std::string l = next(key.c_str());
    if (l.rfind(key + " ", 0) != 0 && l != key) throw ParseError(line_no, "expected '" + key + "'");
    return l.size() > key.size() ? l.substr(key.size() + 1) : std::string();
  };

  const std::string version = field("version");
  if (version != std::to_string(kTableVersion))
    throw UnsupportedVersionError("calibration table version '" + version + "' is not supported");

  CalibrationTable table;
  try {
    table.schedule = parse_schedule(field("schedule"));
  } catch (const ArgumentError& e) {
    throw ParseError(line_no, e.what());
  }
  try {
    table.param = parse_parametrization(field("parametrization"));
  } catch (const ArgumentError& e) {
    throw ParseError(line_no, e.what());
  }
  const std::string dim_text = field("dim");
  table.dim = static_cast<Eigen::Index>(parse_number(line_no, dim_text));
  if (table.dim < 1) throw ParseError(line_no, "dim must be positive");
  table.provenance = field("provenance");
  table.config_hash = field("config_hash");
  const std::string cond = field("conditional");
  if (cond != "0" && cond != "1") throw ParseError(line_no, "conditional must be 0 or 1");
  const std::string rows_text = field("rows");
  const double rows_value = parse_number(line_no, rows_text);
  const auto rows = static_cast<std::size_t>(rows_value);
  if (rows_value < 1 || static_cast<double>(rows) != rows_value) throw ParseError(line_no, "bad row count");
  next("column header");

  const std::size_t columns = 2 + table.dim + (cond == "1" ? 1 : 0);
  for (std::size_t r = 0; r < rows; ++r) {
    next("table row");
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1))
      cells.push_back(rest.substr(0, pos));
    cells.push_back(rest);
    if (cells.size() != columns) throw ParseError(line_no, "expected " + std::to_string(columns) + " columns");
    TableEntry e;
    e.t = parse_number(line_no, cells[0]);
    e.se = parse_number(line_no, cells[1]);
    e.value.resize(table.dim);
    for (Eigen::Index i = 0; i < table.dim; ++i) e.value(i) = parse_number(line_no, cells[2 + i]);
    if (cond == "1") {
      const double y = parse_number(line_no, cells.back());
      if (y < 0 || y != std::floor(y)) throw ParseError(line_no, "bad label");
      e.label = static_cast<int>(y);
    }
    table.entries.push_back(std::move(e));
  }
  if (std::getline(in, line) && !line.empty()) throw ParseError(line_no + 1, "unexpected content after table rows");
  try {
    table.validate();
  } catch (const ArgumentError& e) {
    throw ParseError(line_no, e.what());
  }
  return table;
}

void save_table(const CalibrationTable& table, const std::filesystem::path& path) {
  const std::string text = to_text(table);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write table " + path.string());
  out << text;
  if (!out) throw Error("failed writing table " + path.string());
}

CalibrationTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open table " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_table(buf.str());
}

}  // namespace caldpm
