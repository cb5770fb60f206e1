#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "caldpm/data.hpp"
#include "caldpm/model.hpp"
#include "caldpm/parametrize.hpp"
#include "caldpm/rng.hpp"
#include "caldpm/schedule.hpp"

namespace caldpm {

enum class Activation { tanh, sigmoid };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Fourier time features: sin and cos of 2 pi f_j t, f_j log-spaced in [f_min, f_max].
struct TimeEmbedding {
  int frequencies = 16;
  double f_min = 1.0;
  double f_max = 1000.0;

  int features() const { return 2 * frequencies; }
  /// (2F x n) features for each entry of `times`.
  Eigen::MatrixXd operator()(const Eigen::VectorXd& times) const;
};

/// Fully connected tanh/sigmoid network with a linear head. Parameters live in
/// one flat vector laid out layer by layer as [W (out x in, column-major), b].
struct MlpShape {
  int in = 0;
  std::vector<int> hidden;
  int out = 0;
  Activation activation = Activation::tanh;

  int layers() const { return static_cast<int>(hidden.size()) + 1; }
  int fan_in(int layer) const { return layer == 0 ? in : hidden[layer - 1]; }
  int fan_out(int layer) const { return layer == layers() - 1 ? out : hidden[layer]; }
  Eigen::Index offset(int layer) const;
  Eigen::Index size() const { return offset(layers()); }
};

/// Intermediate activations of one batched forward pass.
struct MlpTape {
  std::vector<Eigen::MatrixXd> inputs;  // inputs[l] is the input of layer l
  Eigen::MatrixXd output;
};

Eigen::MatrixXd mlp_forward(const MlpShape& shape, const Eigen::VectorXd& params, const Eigen::MatrixXd& input,
                            MlpTape* tape = nullptr);
/// Gradient of sum(d_output .* output) with respect to the parameters.
Eigen::VectorXd mlp_backward(const MlpShape& shape, const Eigen::VectorXd& params, const MlpTape& tape,
                             const Eigen::MatrixXd& d_output);
/// Weights ~ N(0, 1/fan_in), zero biases; optionally a zero head.
Eigen::VectorXd mlp_init(const MlpShape& shape, Rng& rng, bool zero_head);

struct NetConfig {
  Eigen::Index dim = 2;
  std::vector<int> hidden{128, 128, 128};
  Activation activation = Activation::tanh;
  TimeEmbedding embedding;
  Parametrization param = Parametrization::noise;
  bool zero_head = false;

  MlpShape shape() const;
  void validate() const;
};

/// theta: the flat parameter vector of a NetConfig-shaped network.
struct NetParams {
  Eigen::VectorXd values;
};

NetParams init_params(const NetConfig& config, Seed seed);

/// Network output for a batch; one time per column (or one shared time).
Eigen::MatrixXd forward(const NetParams& params, const NetConfig& config, const Eigen::MatrixXd& x,
                        const Eigen::VectorXd& times, MlpTape* tape = nullptr);
Eigen::MatrixXd forward(const NetParams& params, const NetConfig& config, const Eigen::MatrixXd& x, double t);

/// lambda(t) in the training objective.
enum class Weighting { uniform, g_squared, sigma_squared };

std::string_view to_string(Weighting w);
Weighting parse_weighting(std::string_view name);

/// Loss value plus everything backward() needs.
struct LossContext {
  double value = 0;
  MlpTape tape;
  Eigen::MatrixXd d_output;  // dLoss / d(network output)
};

/// (1/n) sum_j lambda(t_j) w(t_j) ||net(x_t^j, t_j) - target_j||^2 with the DSM weight
/// w and target of config.param (1/(2 sigma^2) and eps for noise prediction).
LossContext dsm_loss(const NetParams& params, const NetConfig& config, const NoiseSchedule& schedule,
                     const Eigen::MatrixXd& x0, const Eigen::MatrixXd& noise, const Eigen::VectorXd& times,
                     Weighting weighting = Weighting::uniform);
Eigen::VectorXd backward(const NetParams& params, const NetConfig& config, const LossContext& context);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(AdamConfig config, Eigen::Index size);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  long steps() const { return t_; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

/// h_phi(t): MLP from the time embedding to R^k; default widths 512 x 3.
struct RecorderConfig {
  Eigen::Index dim = 2;
  std::vector<int> hidden{512, 512, 512};
  Activation activation = Activation::tanh;
  TimeEmbedding embedding;
  /// Start from h = 0.
  bool zero_head = true;

  MlpShape shape() const;
};

struct RecorderParams {
  Eigen::VectorXd values;
};

RecorderParams init_recorder(const RecorderConfig& config, Seed seed);

Eigen::MatrixXd recorder_forward(const RecorderParams& params, const RecorderConfig& config,
                                 const Eigen::VectorXd& times, MlpTape* tape = nullptr);

/// (1/n) sum_j ||h(times[group_j]) - outputs_j||^2. `outputs` are model outputs
/// treated as constants, so no gradient reaches the model.
LossContext recorder_loss(const RecorderParams& params, const RecorderConfig& config, const Eigen::VectorXd& times,
                          const Eigen::MatrixXd& outputs, const Eigen::VectorXi& group);
Eigen::VectorXd recorder_backward(const RecorderParams& params, const RecorderConfig& config,
                                  const LossContext& context);

struct TrainConfig {
  AdamConfig adam;
  Eigen::Index batch = 128;
  long steps = 1000;
  Weighting weighting = Weighting::uniform;
  /// Draw t from the 1001-point discrete grid (excluding 0) instead of U[t_min, T].
  bool discrete_timesteps = false;
  /// Train the recorder jointly with weight beta on its loss.
  bool joint_recorder = false;
  double beta = 1.0;
  Seed seed{0};
};

struct TrainResult {
  NetParams params;
  std::vector<double> losses;  // DSM loss per step
  std::optional<RecorderParams> recorder;
  std::vector<double> recorder_losses;
};

TrainResult train(NetParams params, const NetConfig& config, const NoiseSchedule& schedule, const DataSource& source,
                  const TrainConfig& train_config, const RecorderConfig* recorder_config = nullptr);

struct RecorderTrainConfig {
  AdamConfig adam{3e-4};
  long epochs = 1000;
  /// Times visited every epoch; one optimizer step per epoch.
  std::vector<double> times;
  Eigen::Index batch_per_time = 256;
  /// Cosine decay of the learning rate to zero over `epochs`.
  bool cosine_decay = true;
  /// Cap on the EMA decay of the returned weights, min(ema, (1 + e) / (10 + e)); 0 returns the live weights.
  double ema = 0.999;
  Seed seed{0};
};

struct RecorderLogEntry {
  long epoch = 0;
  double mse = 0;  // mean over times and coordinates of (h - truth)^2
};

struct RecorderResult {
  RecorderParams params;  // EMA weights
  std::vector<RecorderLogEntry> log;  // logged at epochs 1, 2, 4, ... and the last one
};

/// Post-hoc recording: fit h_phi(t) to the mean output of a frozen model.
/// `truth` (k x times) is the reference used for the log; may be null.
RecorderResult train_recorder(const Model& model, const DataSource& source, const NoiseSchedule& schedule,
                              const RecorderConfig& config, const RecorderTrainConfig& train_config,
                              const Eigen::MatrixXd* truth = nullptr);

/// eps_theta (or whatever config.param says) as a Model.
class NetModel final : public Model {
 public:
  NetModel(NetConfig config, NetParams params);
  Eigen::Index dim() const override { return config_.dim; }
  Parametrization parametrization() const override { return config_.param; }
  Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t) const override;

  const NetConfig& config() const { return config_; }
  const NetParams& params() const { return params_; }

 private:
  NetConfig config_;
  NetParams params_;
};

struct Checkpoint {
  NetConfig config;
  NoiseSchedule schedule = NoiseSchedule::vp_linear();
  NetParams params;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Text header line followed by the raw little-endian float64 parameter array.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace caldpm
