#include "caldpm/schedule.hpp"

#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>

namespace caldpm {

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::vp_linear ? "vp-linear" : "ve-geometric";
}

std::string_view to_string(Spacing spacing) {
  return spacing == Spacing::uniform_t ? "uniform-t" : "uniform-logsnr";
}

Spacing parse_spacing(std::string_view name) {
  if (name == "uniform-t") return Spacing::uniform_t;
  if (name == "uniform-logsnr") return Spacing::uniform_log_snr;
  throw ArgumentError("unknown spacing '" + std::string(name) + "'");
}

double end_time_for(int steps) { return steps < 15 ? 1e-3 : 1e-4; }

TimeGrid make_time_grid(const NoiseSchedule& schedule, int steps, Spacing spacing, std::optional<double> t_end) {
  if (steps < 1) throw ArgumentError("time grid needs at least one step");
  const double T = schedule.horizon();
  const double end = t_end.value_or(end_time_for(steps));
  if (!(end > 0 && end < T)) throw ArgumentError("grid end time must lie in (0, T)");

  TimeGrid grid;
  grid.spacing = spacing;
  grid.times.resize(steps + 1);
  if (spacing == Spacing::uniform_t) {
    for (int i = 0; i <= steps; ++i) grid.times[i] = T + (end - T) * static_cast<double>(i) / steps;
  } else {
    const double lam_T = schedule.log_snr(T);
    const double lam_end = schedule.log_snr(end);
    for (int i = 0; i <= steps; ++i)
      grid.times[i] = schedule.time_from_log_snr(lam_T + (lam_end - lam_T) * static_cast<double>(i) / steps);
  }
  grid.times.front() = T;
  grid.times.back() = end;
  return grid;
}

std::vector<double> discrete_times(const NoiseSchedule& schedule, int count) {
  if (count < 1) throw ArgumentError("discrete grid needs at least one interval");
  std::vector<double> times(count + 1);
  for (int i = 0; i <= count; ++i) times[i] = schedule.horizon() * static_cast<double>(i) / count;
  return times;
}

namespace {

std::string format17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view key, std::string_view text) {
  double value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ArgumentError("schedule field '" + std::string(key) + "' is not a number: '" + std::string(text) + "'");
  return value;
}

}  // namespace

std::string to_text(const NoiseSchedule& schedule) {
  std::string out(to_string(schedule.kind()));
  const bool vp = schedule.kind() == ScheduleKind::vp_linear;
  out += vp ? " beta_min=" : " sigma_min=";
  out += format17(schedule.lower());
  out += vp ? " beta_max=" : " sigma_max=";
  out += format17(schedule.upper());
  out += " T=" + format17(schedule.horizon());
  out += " prior_std=" + format17(schedule.prior_std());
  return out;
}

NoiseSchedule parse_schedule(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string kind;
  in >> kind;
  std::map<std::string, double, std::less<>> fields;
  for (std::string token; in >> token;) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ArgumentError("malformed schedule field '" + token + "'");
    const std::string key = token.substr(0, eq);
    fields[key] = parse_double(key, std::string_view(token).substr(eq + 1));
  }
  auto take = [&](const char* key) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ArgumentError(std::string("schedule missing field '") + key + "'");
    const double v = it->second;
    fields.erase(it);
    return v;
  };

  NoiseSchedule schedule = [&] {
    if (kind == "vp-linear") {
      const double lo = take("beta_min"), hi = take("beta_max"), T = take("T");
      return NoiseSchedule::vp_linear(lo, hi, T);
    }
    if (kind == "ve-geometric") {
      const double lo = take("sigma_min"), hi = take("sigma_max"), T = take("T");
      return NoiseSchedule::ve_geometric(lo, hi, T);
    }
    throw ArgumentError("unknown schedule kind '" + kind + "'");
  }();
  if (fields.contains("prior_std") && take("prior_std") != schedule.prior_std())
    throw ArgumentError("schedule prior_std does not match its kind");
  if (!fields.empty()) throw ArgumentError("unknown schedule field '" + fields.begin()->first + "'");
  return schedule;
}

}  // namespace caldpm
