#include "caldpm/rng.hpp"

#include <bit>

namespace caldpm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Seed Seed::child(std::uint64_t index) const {
  return Seed(splitmix64(value_ ^ splitmix64(index + 0x632be59bd9b4e019ULL)));
}

Seed Seed::child(std::string_view tag) const { return child(fnv1a(tag)); }

Seed Seed::at_time(double t) const { return child(std::bit_cast<std::uint64_t>(t)); }

Rng Seed::engine() const {
  std::seed_seq seq{static_cast<std::uint32_t>(value_), static_cast<std::uint32_t>(value_ >> 32)};
  return Rng(seq);
}

void fill_normal(Rng& rng, Eigen::Ref<Eigen::MatrixXd> out) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = normal(rng);
}

Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd out(rows, cols);
  fill_normal(rng, out);
  return out;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace caldpm
