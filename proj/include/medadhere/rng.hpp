#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace medadhere {

/// Mixes a base seed with stream keys (patient index, chain, draw index, ...)
/// into an independent 64-bit seed. Streams depend only on the keys, never
/// on scheduling, so parallel work reproduces serial output bit for bit.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

/// Stable 64-bit FNV-1a hash, used to key streams by patient id.
std::uint64_t hash_string(std::string_view text);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return uniform_(engine_); }
  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  /// Index drawn with probability proportional to `weights` (need not sum to 1).
  int categorical(std::span<const double> weights);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Multinomial resampling: `count` i.i.d. indices from normalized weights.
void multinomial_resample(std::span<const double> weights, int count, Rng& rng,
                          std::vector<int>& out);

/// Systematic resampling (single uniform offset).
void systematic_resample(std::span<const double> weights, int count, Rng& rng,
                         std::vector<int>& out);

}  // namespace medadhere
