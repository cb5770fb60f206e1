#include "caldpm/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace caldpm {

namespace {

using json = nlohmann::json;

// Walks one JSON object, remembering which keys were consumed.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }
  std::string key(const char* k) const { return path_.empty() ? k : path_ + "." + k; }

  template <typename T>
  T get(const char* k, T fallback) {
    seen_.insert(k);
    if (!j_.contains(k)) return fallback;
    try {
      return j_.at(k).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(key(k), "has the wrong type");
    }
  }

  template <typename T>
  T require(const char* k) {
    if (!j_.contains(k)) throw ConfigError(key(k), "is required");
    return get<T>(k, T{});
  }

  Block sub(const char* k) {
    seen_.insert(k);
    static const json empty = json::object();
    return Block(j_.contains(k) ? j_.at(k) : empty, key(k));
  }

  const json& raw(const char* k) {
    seen_.insert(k);
    return j_.at(k);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw ConfigError(key(k.c_str()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto guarded(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key, e.what());
  }
}

Eigen::VectorXd to_vector(const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()); }

NoiseSchedule parse_schedule_block(Block b) {
  const auto kind = b.get<std::string>("kind", "vp-linear");
  NoiseSchedule s = guarded(b.key("kind"), [&] {
    if (kind == "vp-linear")
      return NoiseSchedule::vp_linear(b.get("beta_min", 0.1), b.get("beta_max", 20.0), b.get("T", 1.0));
    if (kind == "ve-geometric")
      return NoiseSchedule::ve_geometric(b.get("sigma_min", 0.01), b.get("sigma_max", 50.0), b.get("T", 1.0));
    throw ConfigError(b.key("kind"), "unknown schedule kind '" + kind + "'");
  });
  b.finish();
  return s;
}

GaussianMixture parse_mixture_block(Block b) {
  const auto dim = b.require<Eigen::Index>("dim");
  if (dim < 1) throw ConfigError(b.key("dim"), "must be positive");
  std::vector<Component> comps;
  const json& list = b.raw("components");
  if (!list.is_array() || list.empty()) throw ConfigError(b.key("components"), "must be a nonempty list");
  for (std::size_t i = 0; i < list.size(); ++i) {
    Block c(list[i], b.key("components") + "[" + std::to_string(i) + "]");
    const auto mean = c.require<std::vector<double>>("mean");
    const auto cov = c.require<std::vector<double>>("cov");
    const double weight = c.require<double>("weight");
    c.finish();
    if (static_cast<Eigen::Index>(mean.size()) != dim) throw ConfigError(c.key("mean"), "must have dim entries");
    if (static_cast<Eigen::Index>(cov.size()) != dim * dim)
      throw ConfigError(c.key("cov"), "must have dim*dim entries (row-major)");
    Eigen::MatrixXd C(dim, dim);
    for (Eigen::Index r = 0; r < dim; ++r)
      for (Eigen::Index k = 0; k < dim; ++k) C(r, k) = cov[r * dim + k];
    comps.push_back({weight, to_vector(mean), C});
  }
  b.finish();
  return guarded(b.key("components"), [&] { return GaussianMixture(std::move(comps)); });
}

}  // namespace

RunConfig parse_config(const json& j) {
  RunConfig c;
  Block root(j, "");
  c.seed = root.get<std::uint64_t>("seed", 0);
  c.workers = root.get("workers", 1);
  if (c.workers < 1) throw ConfigError("workers", "must be >= 1");
  c.out = root.get<std::string>("out", "run");
  c.schedule = parse_schedule_block(root.sub("schedule"));
  if (root.has("mixture")) c.mixture = parse_mixture_block(root.sub("mixture"));

  {
    Block b = root.sub("net");
    c.net.dim = c.mixture ? c.mixture->dim() : 2;
    c.net.hidden = b.get("hidden", c.net.hidden);
    c.net.activation = guarded(b.key("activation"), [&] {
      return parse_activation(b.get<std::string>("activation", "tanh"));
    });
    c.net.embedding.frequencies = b.get("frequencies", c.net.embedding.frequencies);
    c.net.embedding.f_min = b.get("f_min", c.net.embedding.f_min);
    c.net.embedding.f_max = b.get("f_max", c.net.embedding.f_max);
    c.net.param = guarded(b.key("parametrization"), [&] {
      return parse_parametrization(b.get<std::string>("parametrization", "noise"));
    });
    c.net.zero_head = b.get("zero_head", false);
    b.finish();
    guarded("net", [&] {
      c.net.validate();
      return 0;
    });
  }
  {
    Block b = root.sub("train");
    auto& t = c.train.train;
    t.adam.lr = b.get("lr", t.adam.lr);
    if (!(t.adam.lr >= 0)) throw ConfigError(b.key("lr"), "must be nonnegative");
    t.batch = b.get("batch", t.batch);
    if (t.batch < 1) throw ConfigError(b.key("batch"), "must be >= 1");
    t.steps = b.get("steps", t.steps);
    if (t.steps < 0) throw ConfigError(b.key("steps"), "must be >= 0");
    t.weighting = guarded(b.key("weighting"), [&] {
      return parse_weighting(b.get<std::string>("weighting", "uniform"));
    });
    t.discrete_timesteps = b.get("discrete_timesteps", false);
    t.joint_recorder = b.get("joint_recorder", false);
    t.beta = b.get("beta", 1.0);
    c.train.data_size = b.get<Eigen::Index>("data_size", 0);
    if (c.train.data_size < 0) throw ConfigError(b.key("data_size"), "must be >= 0");
    b.finish();
  }
  {
    Block b = root.sub("model");
    c.model.kind = b.get<std::string>("kind", "oracle");
    if (c.model.kind != "oracle" && c.model.kind != "net")
      throw ConfigError(b.key("kind"), "must be 'oracle' or 'net'");
    if (b.has("checkpoint")) c.model.checkpoint = b.get<std::string>("checkpoint", "");
    c.model.param = guarded(b.key("parametrization"), [&] {
      return parse_parametrization(b.get<std::string>("parametrization", "noise"));
    });
    if (b.has("bias")) c.model.bias = to_vector(b.get<std::vector<double>>("bias", {}));
    b.finish();
  }
  {
    Block b = root.sub("calibration");
    auto& k = c.calibration;
    k.source = b.get<std::string>("source", k.source);
    if (k.source != "training-data" && k.source != "generated-data")
      throw ConfigError(b.key("source"), "must be 'training-data' or 'generated-data'");
    k.n = b.get("n", k.n);
    if (k.n < 1) throw ConfigError(b.key("n"), "must be >= 1");
    k.partial = b.get("partial", k.partial);
    if (k.partial < 0) throw ConfigError(b.key("partial"), "must be >= 0");
    k.grid = b.get<std::string>("grid", k.grid);
    if (k.grid != "sampler" && k.grid != "quadrature") throw ConfigError(b.key("grid"), "must be 'sampler' or 'quadrature'");
    k.antithetic = b.get("antithetic", false);
    b.finish();
  }
  {
    Block b = root.sub("sampler");
    auto& s = c.sampler.config;
    s.kind = guarded(b.key("kind"), [&] { return parse_sampler_kind(b.get<std::string>("kind", "dpm-solver")); });
    s.order = b.get("order", 1);
    s.nfe = b.get("nfe", 20);
    if (b.has("spacing"))
      s.spacing = guarded(b.key("spacing"), [&] { return parse_spacing(b.get<std::string>("spacing", "")); });
    if (b.has("t_end")) s.t_end = b.get("t_end", 0.0);
    s.noise_scale = b.get("noise_scale", 1.0);
    c.sampler.n = b.get<Eigen::Index>("n", 1000);
    if (c.sampler.n < 1) throw ConfigError(b.key("n"), "must be >= 1");
    b.finish();
    guarded("sampler", [&] {
      s.validate();
      return 0;
    });
  }
  {
    Block b = root.sub("evaluate");
    auto& e = c.evaluate;
    e.n = b.get("n", e.n);
    e.times = b.get("times", e.times);
    e.quadrature_points = b.get("quadrature_points", e.quadrature_points);
    e.martingale_outer = b.get("martingale_outer", e.martingale_outer);
    e.martingale_inner = b.get("martingale_inner", e.martingale_inner);
    e.concentration_n = b.get("concentration_n", e.concentration_n);
    e.concentration_steps = b.get("concentration_steps", e.concentration_steps);
    e.loglik_n = b.get("loglik_n", e.loglik_n);
    if (e.n < 2 || e.times < 1 || e.quadrature_points < 2 || e.martingale_outer < 1 || e.martingale_inner < 2 ||
        e.concentration_n < 2 || e.concentration_steps < 1 || e.loglik_n < 1)
      throw ConfigError("evaluate", "sample sizes and grid sizes must be positive");
    b.finish();
  }
  root.finish();
  if (c.model.bias && c.mixture && c.model.bias->size() != c.mixture->dim())
    throw ConfigError("model.bias", "must have dim entries");
  c.set_seed(c.seed);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

void RunConfig::set_seed(std::uint64_t value) {
  seed = value;
  sampler.config.seed = Seed(value).child("sampler");
  train.train.seed = Seed(value).child("train");
}

const GaussianMixture& RunConfig::require_mixture() const {
  if (!mixture) throw ConfigError("mixture", "is required for this command");
  return *mixture;
}

nlohmann::ordered_json RunConfig::canonical() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["schedule"] = to_text(schedule);
  if (mixture) {
    nlohmann::ordered_json comps = nlohmann::ordered_json::array();
    for (const auto& comp : mixture->components()) {
      std::vector<double> cov;
      for (Eigen::Index r = 0; r < comp.cov.rows(); ++r)
        for (Eigen::Index k = 0; k < comp.cov.cols(); ++k) cov.push_back(comp.cov(r, k));
      comps.push_back({{"weight", comp.weight},
                       {"mean", std::vector<double>(comp.mean.data(), comp.mean.data() + comp.mean.size())},
                       {"cov", cov}});
    }
    j["mixture"] = {{"dim", mixture->dim()}, {"components", comps}};
  }
  j["net"] = {{"hidden", net.hidden},
              {"activation", to_string(net.activation)},
              {"frequencies", net.embedding.frequencies},
              {"f_min", net.embedding.f_min},
              {"f_max", net.embedding.f_max},
              {"parametrization", to_string(net.param)},
              {"zero_head", net.zero_head}};
  const auto& t = train.train;
  j["train"] = {{"lr", t.adam.lr},          {"batch", t.batch},
                {"steps", t.steps},         {"weighting", to_string(t.weighting)},
                {"discrete_timesteps", t.discrete_timesteps},
                {"joint_recorder", t.joint_recorder},
                {"beta", t.beta},           {"data_size", train.data_size}};
  j["model"] = {{"kind", model.kind}, {"parametrization", to_string(model.param)}};
  if (model.checkpoint) j["model"]["checkpoint"] = model.checkpoint->string();
  if (model.bias) j["model"]["bias"] = std::vector<double>(model.bias->data(), model.bias->data() + model.bias->size());
  j["calibration"] = {{"source", calibration.source},
                      {"n", calibration.n},
                      {"partial", calibration.partial},
                      {"grid", calibration.grid},
                      {"antithetic", calibration.antithetic}};
  const auto& s = sampler.config;
  j["sampler"] = {{"kind", to_string(s.kind)}, {"order", s.order},         {"nfe", s.nfe},
                  {"spacing", to_string(s.grid_spacing())},               {"noise_scale", s.noise_scale},
                  {"n", sampler.n}};
  if (s.t_end) j["sampler"]["t_end"] = *s.t_end;
  const auto& e = evaluate;
  j["evaluate"] = {{"n", e.n},
                   {"times", e.times},
                   {"quadrature_points", e.quadrature_points},
                   {"martingale_outer", e.martingale_outer},
                   {"martingale_inner", e.martingale_inner},
                   {"concentration_n", e.concentration_n},
                   {"concentration_steps", e.concentration_steps},
                   {"loglik_n", e.loglik_n}};
  return j;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical().dump())));
  return buf;
}

}  // namespace caldpm
