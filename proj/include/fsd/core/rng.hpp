#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fsd {

/// Seeded random stream. Every consumer of randomness receives one of these,
/// derived from a run seed plus a stream name and index, so that no code path
/// touches ambient global state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix(seed)) {}

  /// Seed of the sub-stream `name`/`index` of `seed`.
  static std::uint64_t derive(std::uint64_t seed, std::string_view name,
                              std::uint64_t index = 0);

  static Rng stream(std::uint64_t seed, std::string_view name,
                    std::uint64_t index = 0) {
    return Rng(derive(seed, name, index));
  }

  /// Uniform on [0, 1).
  double uniform() { return unit_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_(engine_); }
  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  static std::uint64_t splitmix(std::uint64_t x);

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace fsd
