#include "speccausal/benchdata.hpp"

#include "speccausal/error.hpp"
#include "speccausal/rng.hpp"

#include <cmath>

namespace speccausal {

double demand_h(double t) {
  const double u = t - 5.0;
  return 2.0 * (u * u * u * u / 600.0 + std::exp(-4.0 * u * u) + t / 10.0 - 2.0);
}

double demand_f(double p, double t, double s) {
  return 100.0 + (10.0 + p) * s * demand_h(t) - 2.0 * p;
}

Dataset gen_demand_design(std::size_t n, double rho, std::uint64_t seed, bool high_dim) {
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("demand design: rho must lie in [0, 1), got " + std::to_string(rho));
  if (n == 0) throw ConfigError("demand design: n must be at least 1");
  Rng rng(seed);
  const Eigen::Index rows = static_cast<Eigen::Index>(n);
  Matrix p(rows, 1), c(rows, 1), o(rows, 2), y(rows, 1);
  Vector truth(rows);
  const double noise_sd = std::sqrt(1.0 - rho * rho);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double s = static_cast<double>(rng.below(7) + 1);
    const double t = rng.uniform(0.0, 10.0);
    const double ci = rng.normal();
    const double v = rng.normal();
    const double eps = rho * v + noise_sd * rng.normal();
    const double price = 25.0 + (ci + 3.0) * demand_h(t) + v;
    const double f = demand_f(price, t, s);
    p(i, 0) = price;
    c(i, 0) = ci;
    o(i, 0) = t;
    o(i, 1) = s;
    y(i, 0) = f + eps;
    truth(i) = f;
  }
  Dataset d;
  d.setting = Setting::ivoc;
  d.metadata = {{"generator", "demand_design"}, {"n", n}, {"rho", rho}, {"seed", seed}, {"high_dim", high_dim}};
  if (high_dim) {
    const DigitEmbedder price_embed(mix_seed(seed, 1));
    const DigitEmbedder season_embed(mix_seed(seed, 2));
    Matrix px(rows, kDigitDim), ox(rows, kDigitDim + 1);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const auto idx = static_cast<std::uint64_t>(i);
      px.row(i) = price_embed.embed((p(i, 0) - kDemandPriceMean) / kDemandPriceScale, idx).transpose();
      ox(i, 0) = o(i, 0);
      ox.row(i).tail(kDigitDim) = season_embed.embed(o(i, 1), idx).transpose();
    }
    d.columns["x"] = std::move(px);
    d.columns["o"] = std::move(ox);
  } else {
    d.columns["x"] = std::move(p);
    d.columns["o"] = std::move(o);
  }
  d.columns["z"] = std::move(c);
  d.columns["y"] = std::move(y);
  d.truth = std::move(truth);
  return d;
}

int digit_index(double x_low) {
  const double v = std::min(std::max(1.5 * x_low + 5.0, 0.0), 9.0);
  // std::round rounds halves away from zero
  return static_cast<int>(std::round(v));
}

DigitEmbedder::DigitEmbedder(std::uint64_t seed) : seed_(seed), prototypes_(10, kDigitDim) {
  Rng rng(mix_seed(seed, 0xD161));
  for (Eigen::Index i = 0; i < prototypes_.size(); ++i) prototypes_.data()[i] = rng.normal();
}

Vector DigitEmbedder::embed(double x_low, std::uint64_t sample_index) const {
  if (!std::isfinite(x_low)) throw NumericError("digit_embed: input is not finite");
  Rng rng(mix_seed(seed_, sample_index + 1));
  Vector v = prototypes_.row(digit_index(x_low)).transpose();
  for (Eigen::Index j = 0; j < v.size(); ++j) v(j) += kDigitNoise * rng.normal();
  return v;
}

Vector digit_embed(double x_low, std::uint64_t seed, std::uint64_t sample_index) {
  return DigitEmbedder(seed).embed(x_low, sample_index);
}

Dataset gen_linear_gaussian_iv(std::size_t n, double a, double c, std::uint64_t seed) {
  if (n == 0) throw ConfigError("linear gaussian iv: n must be at least 1");
  Rng rng(seed);
  const Eigen::Index rows = static_cast<Eigen::Index>(n);
  Matrix x(rows, 1), z(rows, 1), y(rows, 1);
  Vector truth(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double zi = rng.normal();
    const double eps = rng.normal();
    const double v = rng.normal();
    const double xi = zi + c * eps + v;
    x(i, 0) = xi;
    z(i, 0) = zi;
    y(i, 0) = a * xi + eps;
    truth(i) = a * xi;
  }
  Dataset d;
  d.setting = Setting::iv;
  d.columns = {{"x", std::move(x)}, {"z", std::move(z)}, {"y", std::move(y)}};
  d.truth = std::move(truth);
  d.metadata = {{"generator", "linear_gaussian_iv"}, {"n", n}, {"slope", a}, {"confounding", c}, {"seed", seed},
                {"ols_slope", linear_gaussian_ols_slope(a, c)}, {"iv_slope", a}};
  return d;
}

double oos_mse(const Vector& predictions, const Vector& truth) {
  if (predictions.size() != truth.size()) {
    throw DimensionError("oos_mse: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " truth values");
  }
  if (predictions.size() == 0) throw DimensionError("oos_mse: empty input");
  return (predictions - truth).squaredNorm() / static_cast<double>(predictions.size());
}

}  // namespace speccausal
