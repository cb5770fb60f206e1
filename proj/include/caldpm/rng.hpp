#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace caldpm {

using Rng = std::mt19937_64;

/// Deterministic seed tree. A root seed derives named or indexed children so
/// that every Monte Carlo stream (per chunk, per timestep, per chain) is a pure
/// function of the root, independent of how work is scheduled.
class Seed {
 public:
  constexpr explicit Seed(std::uint64_t value = 0) : value_(value) {}

  std::uint64_t value() const { return value_; }

  Seed child(std::uint64_t index) const;
  Seed child(std::string_view tag) const;
  /// Stream keyed by the bit pattern of a time value; equal t gives equal draws.
  Seed at_time(double t) const;

  Rng engine() const;

  friend bool operator==(Seed, Seed) = default;

 private:
  std::uint64_t value_;
};

/// Fills `out` with independent standard normal draws, column by column.
void fill_normal(Rng& rng, Eigen::Ref<Eigen::MatrixXd> out);

Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols);

/// 64-bit FNV-1a; used for config/file hashes written into artifacts.
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace caldpm
