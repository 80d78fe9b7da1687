#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace fragility {

// Portable random stream: MT19937-64 for raw bits, with all transforms
// implemented here so that draws are identical across standard libraries
// (std::*_distribution output is implementation-defined).
//
//   uniform()      53-bit mantissa fill, in [0, 1)
//   normal()       Marsaglia polar method
//   below(n)       rejection sampling on the top bits, unbiased
//   shuffle(v)     Fisher-Yates driven by below()
//
// Independent sub-streams are derived with SplitMix64(seed ^ stream).
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t bits() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  std::uint64_t below(std::uint64_t n);

  template <class T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace fragility
