#include "caldpm/model.hpp"

#include "caldpm/parallel.hpp"

namespace caldpm {

Eigen::MatrixXd eval_chunked(const Model& model, const Eigen::MatrixXd& x, double t) {
  Eigen::MatrixXd out(model.dim(), x.cols());
  parallel::for_chunks(x.cols(), [&](Eigen::Index, Eigen::Index begin, Eigen::Index end) {
    out.middleCols(begin, end - begin) = model.eval(x.middleCols(begin, end - begin), t);
  });
  return out;
}

Eigen::MatrixXd eval_chunked(const Model& model, const Eigen::MatrixXd& x, double t, const Eigen::VectorXi& labels) {
  if (labels.size() != x.cols()) throw ArgumentError("one label per column required");
  Eigen::MatrixXd out(model.dim(), x.cols());
  parallel::for_chunks(x.cols(), [&](Eigen::Index, Eigen::Index begin, Eigen::Index end) {
    out.middleCols(begin, end - begin) =
        model.eval(x.middleCols(begin, end - begin), t, labels.segment(begin, end - begin));
  });
  return out;
}

Eigen::MatrixXd eval_as(const Model& model, Parametrization to, const Eigen::MatrixXd& x, double t,
                        const NoiseSchedule& schedule) {
  return convert(model.eval(x, t), model.parametrization(), to, x, t, schedule);
}

OracleModel::OracleModel(GaussianMixture mixture, NoiseSchedule schedule, Parametrization param)
    : mixture_(std::move(mixture)), schedule_(schedule), param_(param) {}

Eigen::MatrixXd OracleModel::eval(const Eigen::MatrixXd& x, double t) const {
  return convert(score(mixture_, schedule_, x, t), Parametrization::score, param_, x, t, schedule_);
}

Eigen::MatrixXd OracleModel::eval(const Eigen::MatrixXd& x, double t, const Eigen::VectorXi& labels) const {
  if (labels.size() != x.cols()) throw ArgumentError("one label per column required");
  const MarginalMixture marginal(mixture_, schedule_, t);
  Eigen::MatrixXd s(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    mixture_.check_label(labels(j));
    s.col(j) = marginal.component_score(x.col(j), labels(j));
  }
  return convert(s, Parametrization::score, param_, x, t, schedule_);
}

BiasedModel::BiasedModel(ModelPtr base, BiasFn bias) : base_(std::move(base)), bias_(std::move(bias)) {
  if (!base_) throw ArgumentError("biased model needs a base model");
}

BiasedModel::BiasedModel(ModelPtr base, Eigen::VectorXd constant_bias)
    : BiasedModel(std::move(base), [b = std::move(constant_bias)](double) { return b; }) {
  if (bias_(0.0).size() != base_->dim()) throw ArgumentError("bias has the wrong dimension");
}

Eigen::MatrixXd BiasedModel::eval(const Eigen::MatrixXd& x, double t) const {
  return base_->eval(x, t).colwise() + bias_(t);
}

Eigen::MatrixXd BiasedModel::eval(const Eigen::MatrixXd& x, double t, const Eigen::VectorXi& labels) const {
  return base_->eval(x, t, labels).colwise() + bias_(t);
}

ClassBiasedOracle::ClassBiasedOracle(GaussianMixture mixture, NoiseSchedule schedule, Parametrization param,
                                     std::vector<Eigen::VectorXd> biases)
    : oracle_(std::move(mixture), schedule, param), schedule_(schedule) {
  const auto& mix = oracle_.mixture();
  if (static_cast<int>(biases.size()) != mix.size()) throw ArgumentError("one bias per class required");
  biases_.resize(mix.dim(), mix.size());
  for (int y = 0; y < mix.size(); ++y) {
    if (biases[y].size() != mix.dim()) throw ArgumentError("class bias has the wrong dimension");
    biases_.col(y) = biases[y];
  }
}

Eigen::MatrixXd ClassBiasedOracle::eval(const Eigen::MatrixXd& x, double t) const {
  const MarginalMixture marginal(oracle_.mixture(), schedule_, t);
  return oracle_.eval(x, t) + biases_ * marginal.responsibilities(x);
}

Eigen::MatrixXd ClassBiasedOracle::eval(const Eigen::MatrixXd& x, double t, const Eigen::VectorXi& labels) const {
  Eigen::MatrixXd out = oracle_.eval(x, t, labels);
  for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) += biases_.col(labels(j));
  return out;
}

}  // namespace caldpm
