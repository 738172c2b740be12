#include "medadhere/rng.hpp"

#include <algorithm>
#include <numeric>

namespace medadhere {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

std::uint64_t hash_string(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int Rng::categorical(std::span<const double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = uniform() * total;
  const int n = static_cast<int>(weights.size());
  for (int i = 0; i < n; ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  // Round-off: fall back to the last index with positive weight.
  for (int i = n - 1; i >= 0; --i)
    if (weights[i] > 0.0) return i;
  return n - 1;
}

void multinomial_resample(std::span<const double> weights, int count, Rng& rng,
                          std::vector<int>& out) {
  const int n = static_cast<int>(weights.size());
  std::vector<double> cumulative(n);
  std::partial_sum(weights.begin(), weights.end(), cumulative.begin());
  const double total = cumulative.back();
  out.resize(count);
  for (int i = 0; i < count; ++i) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    out[i] = static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative.begin(), n - 1));
  }
}

void systematic_resample(std::span<const double> weights, int count, Rng& rng,
                         std::vector<int>& out) {
  const int n = static_cast<int>(weights.size());
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const double step = total / count;
  double u = rng.uniform() * step;
  out.resize(count);
  double acc = weights[0];
  int j = 0;
  for (int i = 0; i < count; ++i) {
    while (u > acc && j < n - 1) acc += weights[++j];
    out[i] = j;
    u += step;
  }
}

}  // namespace medadhere
