#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "caldpm/mixture.hpp"
#include "caldpm/parametrize.hpp"
#include "caldpm/schedule.hpp"

namespace caldpm {

/// A (possibly conditional) diffusion model evaluated on a batch: x is k x n and
/// the result is k x n in parametrization().
class Model {
 public:
  virtual ~Model() = default;

  virtual Eigen::Index dim() const = 0;
  virtual Parametrization parametrization() const = 0;
  virtual Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t) const = 0;
  /// Conditional output; models without a conditional head ignore the labels.
  virtual Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t, const Eigen::VectorXi& labels) const {
    (void)labels;
    return eval(x, t);
  }
};

using ModelPtr = std::shared_ptr<const Model>;

/// model.eval over fixed-size column chunks (parallel::kChunk), so that results
/// do not depend on the worker count or on the batch width of the caller.
Eigen::MatrixXd eval_chunked(const Model& model, const Eigen::MatrixXd& x, double t);
Eigen::MatrixXd eval_chunked(const Model& model, const Eigen::MatrixXd& x, double t, const Eigen::VectorXi& labels);

/// Model output converted to another parametrization.
Eigen::MatrixXd eval_as(const Model& model, Parametrization to, const Eigen::MatrixXd& x, double t,
                        const NoiseSchedule& schedule);

/// Exact mixture score expressed in any parametrization; the conditional form
/// returns each column's component score.
class OracleModel final : public Model {
 public:
  OracleModel(GaussianMixture mixture, NoiseSchedule schedule, Parametrization param = Parametrization::score);

  Eigen::Index dim() const override { return mixture_.dim(); }
  Parametrization parametrization() const override { return param_; }
  Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t) const override;
  Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t, const Eigen::VectorXi& labels) const override;

  const GaussianMixture& mixture() const { return mixture_; }

 private:
  GaussianMixture mixture_;
  NoiseSchedule schedule_;
  Parametrization param_;
};

/// base(x, t) + b(t), the bias constant in x.
class BiasedModel final : public Model {
 public:
  using BiasFn = std::function<Eigen::VectorXd(double)>;

  BiasedModel(ModelPtr base, BiasFn bias);
  BiasedModel(ModelPtr base, Eigen::VectorXd constant_bias);

  Eigen::Index dim() const override { return base_->dim(); }
  Parametrization parametrization() const override { return base_->parametrization(); }
  Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t) const override;
  Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t, const Eigen::VectorXi& labels) const override;

 private:
  ModelPtr base_;
  BiasFn bias_;
};

/// Conditional oracle with a per-class bias b_y. Its unconditional output is the
/// marginal model: oracle + sum_y P(y | x_t) b_y.
class ClassBiasedOracle final : public Model {
 public:
  ClassBiasedOracle(GaussianMixture mixture, NoiseSchedule schedule, Parametrization param,
                    std::vector<Eigen::VectorXd> biases);

  Eigen::Index dim() const override { return oracle_.dim(); }
  Parametrization parametrization() const override { return oracle_.parametrization(); }
  Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t) const override;
  Eigen::MatrixXd eval(const Eigen::MatrixXd& x, double t, const Eigen::VectorXi& labels) const override;

 private:
  OracleModel oracle_;
  NoiseSchedule schedule_;
  Eigen::MatrixXd biases_;  // k x classes
};

}  // namespace caldpm
