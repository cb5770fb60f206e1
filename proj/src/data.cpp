#include "caldpm/data.hpp"

#include "caldpm/parallel.hpp"

namespace caldpm {

DataSource DataSource::from_mixture(GaussianMixture mixture) {
  DataSource s;
  s.mixture_ = std::move(mixture);
  return s;
}

DataSource DataSource::from_points(Eigen::MatrixXd points, Eigen::VectorXi labels) {
  if (points.cols() == 0 || points.rows() == 0) throw ArgumentError("data source is empty");
  if (labels.size() != 0 && labels.size() != points.cols())
    throw ArgumentError("data source labels do not match point count");
  if (!points.allFinite()) throw NumericError("data source contains non-finite values");
  DataSource s;
  s.points_ = std::move(points);
  s.labels_ = std::move(labels);
  return s;
}

Eigen::Index DataSource::dim() const { return mixture_ ? mixture_->dim() : points_.rows(); }

bool DataSource::labeled() const { return mixture_ || labels_.size() != 0; }

LabeledPoints DataSource::draw(Eigen::Index n, Seed seed) const {
  if (mixture_) return sample_data(*mixture_, n, seed);
  if (n < 1) throw ArgumentError("draw needs n >= 1");
  LabeledPoints out{Eigen::MatrixXd(dim(), n), Eigen::VectorXi(labeled() ? n : 0)};
  const Eigen::Index N = points_.cols();
  for (Eigen::Index j = 0; j < n; ++j) {
    out.points.col(j) = points_.col(j % N);
    if (labeled()) out.labels(j) = labels_(j % N);
  }
  return out;
}

LabeledPoints DataSource::sample(Eigen::Index n, Rng& rng) const {
  if (n < 1) throw ArgumentError("sample needs n >= 1");
  if (mixture_) return sample_data(*mixture_, n, Seed(rng()));
  std::uniform_int_distribution<Eigen::Index> pick(0, points_.cols() - 1);
  LabeledPoints out{Eigen::MatrixXd(dim(), n), Eigen::VectorXi(labeled() ? n : 0)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index i = pick(rng);
    out.points.col(j) = points_.col(i);
    if (labeled()) out.labels(j) = labels_(i);
  }
  return out;
}

ForwardDraws draw_forward(const DataSource& source, const NoiseSchedule& schedule, double t, Eigen::Index n,
                          Seed seed, bool antithetic) {
  if (n < 1) throw ArgumentError("draw_forward needs n >= 1");
  if (antithetic && n % 2 != 0) throw ArgumentError("antithetic draws need an even sample count");
  const double alpha = schedule.alpha(t), sigma = schedule.sigma(t);
  const Eigen::Index unique = antithetic ? n / 2 : n;

  ForwardDraws d;
  d.t = t;
  LabeledPoints clean = source.draw(unique, seed.child("x0"));
  Eigen::MatrixXd half(source.dim(), unique);
  const Seed noise_seed = seed.at_time(t);
  parallel::for_chunks(unique, [&](Eigen::Index c, Eigen::Index begin, Eigen::Index end) {
    Rng rng = noise_seed.child(c).engine();
    fill_normal(rng, half.middleCols(begin, end - begin));
  });

  if (antithetic) {
    d.x0.resize(source.dim(), n);
    d.noise.resize(source.dim(), n);
    d.labels.resize(clean.labels.size() ? n : 0);
    for (Eigen::Index j = 0; j < unique; ++j) {
      d.x0.col(2 * j) = d.x0.col(2 * j + 1) = clean.points.col(j);
      d.noise.col(2 * j) = half.col(j);
      d.noise.col(2 * j + 1) = -half.col(j);
      if (d.labels.size()) d.labels(2 * j) = d.labels(2 * j + 1) = clean.labels(j);
    }
  } else {
    d.x0 = std::move(clean.points);
    d.noise = std::move(half);
    d.labels = std::move(clean.labels);
  }
  d.xt = alpha * d.x0 + sigma * d.noise;
  return d;
}

}  // namespace caldpm
