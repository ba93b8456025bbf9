#pragma once

#include "speccausal/dataset.hpp"

#include <array>
#include <cstdint>

namespace speccausal {

// Demand Design ticket-price model.
double demand_h(double t);
double demand_f(double p, double t, double s);

// Price standardization applied before digit embedding in the high-dimensional variant.
inline constexpr double kDemandPriceMean = 17.779;
inline constexpr double kDemandPriceScale = 3.7;

// Columns: x = P, z = C, o = (T, S), y = f(P, T, S) + eps; truth = f(P, T, S).
// high_dim replaces P and S by 784-dim digit embeddings.
Dataset gen_demand_design(std::size_t n, double rho, std::uint64_t seed, bool high_dim);

inline constexpr int kDigitDim = 784;
inline constexpr double kDigitNoise = 0.1;

// round(min(max(1.5x + 5, 0), 9)) with halves rounded away from zero.
int digit_index(double x_low);

// Ten fixed Gaussian prototypes derived from `seed`.
class DigitEmbedder {
 public:
  explicit DigitEmbedder(std::uint64_t seed);
  // prototype(digit_index(x_low)) + N(0, 0.1^2) noise keyed by (seed, sample_index).
  Vector embed(double x_low, std::uint64_t sample_index) const;
  const Matrix& prototypes() const { return prototypes_; }

 private:
  std::uint64_t seed_;
  Matrix prototypes_;  // 10 x 784
};

Vector digit_embed(double x_low, std::uint64_t seed, std::uint64_t sample_index);

// Z, eps, v ~ N(0,1); X = Z + c eps + v; Y = a X + eps. truth = a X.
Dataset gen_linear_gaussian_iv(std::size_t n, double a, double c, std::uint64_t seed);
// Population least-squares slope of Y on X for the model above.
inline double linear_gaussian_ols_slope(double a, double c) { return a + c / (2.0 + c * c); }

double oos_mse(const Vector& predictions, const Vector& truth);

}  // namespace speccausal
