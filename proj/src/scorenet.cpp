#include "caldpm/scorenet.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

namespace caldpm {

std::string_view to_string(Activation a) { return a == Activation::tanh ? "tanh" : "sigmoid"; }

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ArgumentError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Weighting w) {
  switch (w) {
    case Weighting::uniform: return "uniform";
    case Weighting::g_squared: return "g-squared";
    case Weighting::sigma_squared: return "sigma-squared";
  }
  return "?";
}

Weighting parse_weighting(std::string_view name) {
  for (auto w : {Weighting::uniform, Weighting::g_squared, Weighting::sigma_squared})
    if (name == to_string(w)) return w;
  throw ArgumentError("unknown weighting '" + std::string(name) + "'");
}

Eigen::MatrixXd TimeEmbedding::operator()(const Eigen::VectorXd& times) const {
  Eigen::MatrixXd out(features(), times.size());
  const double ratio = frequencies > 1 ? std::log(f_max / f_min) / (frequencies - 1) : 0.0;
  for (int j = 0; j < frequencies; ++j) {
    const double w = 2 * std::numbers::pi * f_min * std::exp(ratio * j);
    out.row(j) = (w * times.array()).sin().transpose();
    out.row(frequencies + j) = (w * times.array()).cos().transpose();
  }
  return out;
}

Eigen::Index MlpShape::offset(int layer) const {
  Eigen::Index off = 0;
  for (int l = 0; l < layer; ++l) off += static_cast<Eigen::Index>(fan_out(l)) * (fan_in(l) + 1);
  return off;
}

namespace {

void activate(Activation a, Eigen::MatrixXd& z) {
  if (a == Activation::tanh)
    z = z.array().tanh();
  else
    z = 1.0 / (1.0 + (-z.array()).exp());
}

// Derivative expressed through the activation's output h.
Eigen::ArrayXXd activation_slope(Activation a, const Eigen::MatrixXd& h) {
  if (a == Activation::tanh) return 1.0 - h.array().square();
  return h.array() * (1.0 - h.array());
}

}  // namespace

Eigen::MatrixXd mlp_forward(const MlpShape& shape, const Eigen::VectorXd& params, const Eigen::MatrixXd& input,
                            MlpTape* tape) {
  if (params.size() != shape.size()) throw ArgumentError("parameter vector does not match network shape");
  if (input.rows() != shape.in) throw ArgumentError("network input has the wrong size");
  if (!input.allFinite()) throw NumericError("non-finite network input");
  if (tape) tape->inputs.assign(1, input);

  Eigen::MatrixXd z = input;
  for (int l = 0; l < shape.layers(); ++l) {
    const Eigen::Index off = shape.offset(l);
    const int in = shape.fan_in(l), out = shape.fan_out(l);
    const Eigen::Map<const Eigen::MatrixXd> W(params.data() + off, out, in);
    const Eigen::Map<const Eigen::VectorXd> b(params.data() + off + out * in, out);
    Eigen::MatrixXd a = W * z;
    a.colwise() += b;
    if (l + 1 < shape.layers()) {
      activate(shape.activation, a);
      if (tape) tape->inputs.push_back(a);
    }
    z = std::move(a);
  }
  if (tape) tape->output = z;
  return z;
}

Eigen::VectorXd mlp_backward(const MlpShape& shape, const Eigen::VectorXd& params, const MlpTape& tape,
                             const Eigen::MatrixXd& d_output) {
  Eigen::VectorXd grad(shape.size());
  Eigen::MatrixXd g = d_output;
  for (int l = shape.layers() - 1; l >= 0; --l) {
    const Eigen::Index off = shape.offset(l);
    const int in = shape.fan_in(l), out = shape.fan_out(l);
    const Eigen::Map<const Eigen::MatrixXd> W(params.data() + off, out, in);
    Eigen::Map<Eigen::MatrixXd>(grad.data() + off, out, in).noalias() = g * tape.inputs[l].transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + off + out * in, out) = g.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd up = W.transpose() * g;
      g = (up.array() * activation_slope(shape.activation, tape.inputs[l])).matrix();
    }
  }
  return grad;
}

Eigen::VectorXd mlp_init(const MlpShape& shape, Rng& rng, bool zero_head) {
  Eigen::VectorXd params = Eigen::VectorXd::Zero(shape.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int l = 0; l < shape.layers(); ++l) {
    if (zero_head && l == shape.layers() - 1) break;
    const Eigen::Index off = shape.offset(l);
    const double scale = 1.0 / std::sqrt(static_cast<double>(shape.fan_in(l)));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(shape.fan_out(l)) * shape.fan_in(l); ++i)
      params(off + i) = scale * normal(rng);
  }
  return params;
}

MlpShape NetConfig::shape() const {
  return MlpShape{static_cast<int>(dim) + embedding.features(), hidden, static_cast<int>(dim), activation};
}

void NetConfig::validate() const {
  if (dim < 1) throw ArgumentError("network dim must be positive");
  for (int w : hidden)
    if (w < 1) throw ArgumentError("hidden widths must be >= 1");
  if (embedding.frequencies < 0 || !(embedding.f_min > 0) || !(embedding.f_max >= embedding.f_min))
    throw ArgumentError("time embedding frequencies must be positive");
}

NetParams init_params(const NetConfig& config, Seed seed) {
  config.validate();
  Rng rng = seed.engine();
  return {mlp_init(config.shape(), rng, config.zero_head)};
}

namespace {

Eigen::MatrixXd net_input(const NetConfig& config, const Eigen::MatrixXd& x, const Eigen::VectorXd& times) {
  if (x.rows() != config.dim) throw ArgumentError("network input has the wrong dimension");
  if (times.size() != x.cols()) throw ArgumentError("one time per column required");
  if (!x.allFinite() || !times.allFinite()) throw NumericError("non-finite network input");
  Eigen::MatrixXd in(config.shape().in, x.cols());
  in.topRows(config.dim) = x;
  in.bottomRows(config.embedding.features()) = config.embedding(times);
  return in;
}

}  // namespace

Eigen::MatrixXd forward(const NetParams& params, const NetConfig& config, const Eigen::MatrixXd& x,
                        const Eigen::VectorXd& times, MlpTape* tape) {
  return mlp_forward(config.shape(), params.values, net_input(config, x, times), tape);
}

Eigen::MatrixXd forward(const NetParams& params, const NetConfig& config, const Eigen::MatrixXd& x, double t) {
  return forward(params, config, x, Eigen::VectorXd::Constant(x.cols(), t));
}

LossContext dsm_loss(const NetParams& params, const NetConfig& config, const NoiseSchedule& schedule,
                     const Eigen::MatrixXd& x0, const Eigen::MatrixXd& noise, const Eigen::VectorXd& times,
                     Weighting weighting) {
  const Eigen::Index n = x0.cols();
  if (n == 0) throw ArgumentError("dsm_loss needs a nonempty batch");
  if (noise.rows() != x0.rows() || noise.cols() != n || times.size() != n)
    throw ArgumentError("dsm_loss batch shapes disagree");

  Eigen::MatrixXd xt(x0.rows(), n), target(x0.rows(), n);
  Eigen::VectorXd coeff(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double t = times(j);
    if (t < schedule.t_min()) throw DomainError("dsm_loss time below t_min");
    const double a = schedule.alpha(t), s = schedule.sigma(t);
    xt.col(j) = a * x0.col(j) + s * noise.col(j);
    target.col(j) = dsm_target(config.param, x0.col(j), noise.col(j), t, schedule);
    double lambda = 1.0;
    if (weighting == Weighting::g_squared) lambda = drift_diffusion(schedule, t).diffusion2;
    if (weighting == Weighting::sigma_squared) lambda = s * s;
    coeff(j) = lambda * dsm_weight(config.param, t, schedule);
  }

  LossContext ctx;
  const Eigen::MatrixXd residual = forward(params, config, xt, times, &ctx.tape) - target;
  const Eigen::VectorXd sq = residual.colwise().squaredNorm().transpose();
  ctx.value = coeff.dot(sq) / static_cast<double>(n);
  ctx.d_output = residual * (2.0 / static_cast<double>(n) * coeff).asDiagonal();
  return ctx;
}

Eigen::VectorXd backward(const NetParams& params, const NetConfig& config, const LossContext& context) {
  return mlp_backward(config.shape(), params.values, context.tape, context.d_output);
}

Adam::Adam(AdamConfig config, Eigen::Index size)
    : config_(config), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {
  if (!(config.lr >= 0)) throw ArgumentError("learning rate must be nonnegative");
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = config_.beta1 * m_ + (1 - config_.beta1) * grad;
  v_ = config_.beta2 * v_ + (1 - config_.beta2) * grad.cwiseAbs2();
  const double c1 = 1 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1 - std::pow(config_.beta2, static_cast<double>(t_));
  params.array() -= config_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.eps);
}

MlpShape RecorderConfig::shape() const {
  return MlpShape{embedding.features(), hidden, static_cast<int>(dim), activation};
}

RecorderParams init_recorder(const RecorderConfig& config, Seed seed) {
  Rng rng = seed.engine();
  return {mlp_init(config.shape(), rng, config.zero_head)};
}

Eigen::MatrixXd recorder_forward(const RecorderParams& params, const RecorderConfig& config,
                                 const Eigen::VectorXd& times, MlpTape* tape) {
  return mlp_forward(config.shape(), params.values, config.embedding(times), tape);
}

LossContext recorder_loss(const RecorderParams& params, const RecorderConfig& config, const Eigen::VectorXd& times,
                          const Eigen::MatrixXd& outputs, const Eigen::VectorXi& group) {
  const Eigen::Index n = outputs.cols();
  if (n == 0 || group.size() != n) throw ArgumentError("recorder_loss needs one group index per output");
  LossContext ctx;
  const Eigen::MatrixXd h = recorder_forward(params, config, times, &ctx.tape);
  ctx.d_output = Eigen::MatrixXd::Zero(h.rows(), h.cols());
  double total = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::VectorXd r = h.col(group(j)) - outputs.col(j);
    total += r.squaredNorm();
    ctx.d_output.col(group(j)) += (2.0 / static_cast<double>(n)) * r;
  }
  ctx.value = total / static_cast<double>(n);
  return ctx;
}

Eigen::VectorXd recorder_backward(const RecorderParams& params, const RecorderConfig& config,
                                  const LossContext& context) {
  return mlp_backward(config.shape(), params.values, context.tape, context.d_output);
}

TrainResult train(NetParams params, const NetConfig& config, const NoiseSchedule& schedule, const DataSource& source,
                  const TrainConfig& tc, const RecorderConfig* recorder_config) {
  config.validate();
  if (tc.batch < 1) throw ArgumentError("batch size must be >= 1");
  if (!(tc.adam.lr >= 0)) throw ArgumentError("learning rate must be nonnegative");
  if (source.dim() != config.dim) throw ArgumentError("data dimension does not match the network");
  if (tc.joint_recorder && !recorder_config) throw ArgumentError("joint recording needs a recorder config");

  TrainResult result;
  result.params = std::move(params);
  Adam adam(tc.adam, result.params.values.size());
  std::optional<Adam> rec_adam;
  if (tc.joint_recorder) {
    result.recorder = init_recorder(*recorder_config, tc.seed.child("recorder"));
    rec_adam.emplace(tc.adam, result.recorder->values.size());
  }

  const double T = schedule.horizon(), t0 = schedule.t_min();
  const std::vector<double> grid = discrete_times(schedule);
  result.losses.reserve(tc.steps);
  for (long step = 0; step < tc.steps; ++step) {
    Rng rng = tc.seed.child(static_cast<std::uint64_t>(step)).engine();
    const LabeledPoints batch = source.sample(tc.batch, rng);
    const Eigen::MatrixXd noise = standard_normal(rng, config.dim, tc.batch);
    Eigen::VectorXd times(tc.batch);
    if (tc.discrete_timesteps) {
      std::uniform_int_distribution<int> pick(1, static_cast<int>(grid.size()) - 1);
      for (auto& t : times) t = std::max(grid[pick(rng)], t0);
    } else {
      std::uniform_real_distribution<double> uniform(t0, T);
      for (auto& t : times) t = uniform(rng);
    }

    const LossContext ctx = dsm_loss(result.params, config, schedule, batch.points, noise, times, tc.weighting);
    if (!std::isfinite(ctx.value)) throw TrainingError(step, "non-finite training loss");
    result.losses.push_back(ctx.value);
    const Eigen::VectorXd grad = backward(result.params, config, ctx);

    if (tc.joint_recorder) {
      // Stop-gradient: the network outputs enter the recorder loss as constants.
      Eigen::VectorXi group = Eigen::VectorXi::LinSpaced(tc.batch, 0, static_cast<int>(tc.batch) - 1);
      const LossContext rec = recorder_loss(*result.recorder, *recorder_config, times, ctx.tape.output, group);
      if (!std::isfinite(rec.value)) throw TrainingError(step, "non-finite recorder loss");
      result.recorder_losses.push_back(rec.value);
      const Eigen::VectorXd rec_grad = tc.beta * recorder_backward(*result.recorder, *recorder_config, rec);
      rec_adam->step(result.recorder->values, rec_grad);
    }
    adam.step(result.params.values, grad);
  }
  return result;
}

RecorderResult train_recorder(const Model& model, const DataSource& source, const NoiseSchedule& schedule,
                              const RecorderConfig& config, const RecorderTrainConfig& tc,
                              const Eigen::MatrixXd* truth) {
  const Eigen::Index m = static_cast<Eigen::Index>(tc.times.size());
  if (m == 0) throw ArgumentError("recorder training needs at least one time");
  if (tc.batch_per_time < 1) throw ArgumentError("recorder batch must be >= 1");
  if (truth && (truth->rows() != config.dim || truth->cols() != m))
    throw ArgumentError("recorder reference has the wrong shape");
  const Eigen::VectorXd times = Eigen::Map<const Eigen::VectorXd>(tc.times.data(), m);
  const Eigen::Index B = tc.batch_per_time;

  RecorderResult result{init_recorder(config, tc.seed.child("init")), {}};
  RecorderParams live = result.params;
  Adam adam(tc.adam, live.values.size());
  Eigen::VectorXi group(m * B);
  for (Eigen::Index i = 0; i < m; ++i) group.segment(i * B, B).setConstant(static_cast<int>(i));

  long next_log = 1;
  Eigen::MatrixXd outputs(config.dim, m * B);
  for (long epoch = 1; epoch <= tc.epochs; ++epoch) {
    const Seed seed = tc.seed.child(static_cast<std::uint64_t>(epoch));
    for (Eigen::Index i = 0; i < m; ++i) {
      const ForwardDraws d = draw_forward(source, schedule, times(i), B, seed);
      outputs.middleCols(i * B, B) = model.eval(d.xt, times(i));
    }
    const LossContext ctx = recorder_loss(live, config, times, outputs, group);
    if (!std::isfinite(ctx.value)) throw TrainingError(epoch, "non-finite recorder loss");
    if (tc.cosine_decay)
      adam.set_lr(0.5 * tc.adam.lr * (1 + std::cos(M_PI * static_cast<double>(epoch - 1) / static_cast<double>(tc.epochs))));
    adam.step(live.values, recorder_backward(live, config, ctx));
    if (tc.ema > 0) {
      const double decay = std::min(tc.ema, (1.0 + epoch) / (10.0 + epoch));
      result.params.values = decay * result.params.values + (1 - decay) * live.values;
    } else {
      result.params = live;
    }

    if (truth && (epoch == next_log || epoch == tc.epochs)) {
      const Eigen::MatrixXd h = recorder_forward(result.params, config, times);
      result.log.push_back({epoch, (h - *truth).squaredNorm() / static_cast<double>(h.size())});
      if (epoch == next_log) next_log *= 2;
    }
  }
  return result;
}

NetModel::NetModel(NetConfig config, NetParams params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  if (params_.values.size() != config_.shape().size())
    throw ArgumentError("parameter vector does not match network shape");
}

Eigen::MatrixXd NetModel::eval(const Eigen::MatrixXd& x, double t) const { return forward(params_, config_, x, t); }

namespace {

constexpr std::string_view kCheckpointMagic = "caldpm-checkpoint 1";

nlohmann::json net_config_json(const NetConfig& c) {
  return {{"dim", c.dim},
          {"hidden", c.hidden},
          {"activation", to_string(c.activation)},
          {"frequencies", c.embedding.frequencies},
          {"f_min", c.embedding.f_min},
          {"f_max", c.embedding.f_max},
          {"parametrization", to_string(c.param)},
          {"zero_head", c.zero_head}};
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.dim = j.at("dim").get<Eigen::Index>();
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.activation = parse_activation(j.at("activation").get<std::string>());
  c.embedding.frequencies = j.at("frequencies").get<int>();
  c.embedding.f_min = j.at("f_min").get<double>();
  c.embedding.f_max = j.at("f_max").get<double>();
  c.param = parse_parametrization(j.at("parametrization").get<std::string>());
  c.zero_head = j.at("zero_head").get<bool>();
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const nlohmann::json header = {{"config", net_config_json(ck.config)},
                                 {"schedule", to_text(ck.schedule)},
                                 {"seed", ck.seed},
                                 {"config_hash", ck.config_hash},
                                 {"count", ck.params.values.size()}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (double v : ck.params.values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(bytes, 8);
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string magic, header_line;
  if (!std::getline(in, magic)) throw ParseError(1, "empty checkpoint");
  if (magic.rfind("caldpm-checkpoint ", 0) != 0) throw ParseError(1, "not a checkpoint file");
  if (magic != kCheckpointMagic) throw UnsupportedVersionError("checkpoint version '" + magic.substr(18) + "'");
  if (!std::getline(in, header_line)) throw ParseError(2, "missing checkpoint header");

  Checkpoint ck;
  Eigen::Index count = 0;
  try {
    const auto header = nlohmann::json::parse(header_line);
    ck.config = net_config_from_json(header.at("config"));
    ck.schedule = parse_schedule(header.at("schedule").get<std::string>());
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.config_hash = header.at("config_hash").get<std::string>();
    count = header.at("count").get<Eigen::Index>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(2, e.what());
  } catch (const ArgumentError& e) {
    throw ParseError(2, e.what());
  }
  if (count != ck.config.shape().size()) throw ParseError(2, "parameter count does not match the network shape");

  ck.params.values.resize(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw ParseError(3, "truncated parameter array");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    ck.params.values(i) = std::bit_cast<double>(bits);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(3, "trailing bytes after parameter array");
  return ck;
}

}  // namespace caldpm
