#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace speccausal {

// mt19937_64 with distribution transforms written out so that draws are
// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller; the second variate of each pair is cached.
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  // Uniform integer in [0, n), rejection sampling so there is no modulo bias.
  std::uint64_t below(std::uint64_t n);
  // Index drawn with probability proportional to weights.
  std::size_t categorical(const std::vector<double>& cumulative);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer over (master, index); used for replicate and sample sub-seeds.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index);

std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace speccausal
