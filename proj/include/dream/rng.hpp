#pragma once

// Keyed random substreams: Rng(seed, {k0, k1, ...}) is a pure function of the
// seed and keys, so each (epoch, sample, purpose) tuple owns an independent,
// reproducible stream regardless of evaluation order.

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <vector>

namespace dream {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys = {}) {
    std::uint64_t h = splitmix64(seed);
    for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632BE59BD9B4E019ULL));
    engine_.seed(h);
  }

  /// Uniform on [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  std::uint64_t uniform_int(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }

  /// k distinct indices from [0, n), uniformly without replacement, in draw order.
  std::vector<int> choose(int n, int k) {
    std::vector<int> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < k; ++i) {
      const auto j = i + static_cast<int>(uniform_int(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    return pool;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Purpose tags for substream keys.
enum class Stream : std::uint64_t {
  init = 1,
  data,
  shuffle,
  mask,
  dropout,
  noise,
  decode,
  eval,
};

constexpr std::uint64_t key(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace dream
