#include "unit/helpers.hpp"

#include "speccausal/benchdata.hpp"
#include "speccausal/error.hpp"

#include <doctest.h>

#include <cmath>

using namespace speccausal;
using testutil::max_abs;

TEST_CASE("demand h fixtures") {
  CHECK(demand_h(5.0) == doctest::Approx(-1.0).epsilon(1e-15));
  // 2 (625/600 + e^-100 + 0 - 2)
  CHECK(std::abs(demand_h(0.0) - 2.0 * (625.0 / 600.0 + std::exp(-100.0) - 2.0)) < 1e-15);
  CHECK(std::abs(demand_h(0.0) + 1.9166667) < 1e-6);
  CHECK(std::abs(demand_h(10.0) - 0.0833333) < 1e-6);
}

TEST_CASE("demand f fixtures") {
  CHECK(demand_f(25.0, 5.0, 4.0) == -90.0);
  CHECK(demand_f(0.0, 5.0, 1.0) == 90.0);
  CHECK(demand_f(20.0, 10.0, 7.0) == doctest::Approx(77.5).epsilon(1e-12));
  // C = 0, T = 5, V = 0 gives P = 25 + 3 h(5)
  CHECK(25.0 + 3.0 * demand_h(5.0) == 22.0);
}

TEST_CASE("demand design columns and determinism") {
  const Dataset a = gen_demand_design(50, 0.5, 3, false);
  const Dataset b = gen_demand_design(50, 0.5, 3, false);
  CHECK_NOTHROW(a.validate());
  CHECK(a.setting == Setting::ivoc);
  CHECK(a.dim("x") == 1);
  CHECK(a.dim("z") == 1);
  CHECK(a.dim("o") == 2);
  REQUIRE(a.truth.has_value());
  for (const auto& [name, col] : a.columns) CHECK(max_abs(col - b.col(name)) == 0.0);
  CHECK(max_abs(*a.truth - *b.truth) == 0.0);
  const Dataset c = gen_demand_design(50, 0.5, 4, false);
  CHECK(max_abs(a.col("y") - c.col("y")) > 0.0);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double p = a.col("x")(i, 0), t = a.col("o")(i, 0), s = a.col("o")(i, 1);
    CHECK((*a.truth)(i) == demand_f(p, t, s));
    CHECK(s == std::round(s));
    CHECK(s >= 1.0);
    CHECK(s <= 7.0);
    CHECK(t >= 0.0);
    CHECK(t <= 10.0);
  }
}

TEST_CASE("demand design rejects rho outside [0, 1)") {
  CHECK_THROWS_AS(gen_demand_design(10, 1.0, 0, false), ConfigError);
  CHECK_THROWS_AS(gen_demand_design(10, -0.1, 0, false), ConfigError);
  CHECK_NOTHROW(gen_demand_design(10, 0.0, 0, false));
}

TEST_CASE("demand design moments at n = 1e5") {
  const Dataset d = gen_demand_design(100000, 0.5, 11, false);
  const Eigen::Index n = d.rows();
  // eps = y - f, V = P - 25 - (C + 3) h(T)
  Vector eps(n), v(n);
  double s_mean = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    eps(i) = d.col("y")(i, 0) - (*d.truth)(i);
    v(i) = d.col("x")(i, 0) - 25.0 - (d.col("z")(i, 0) + 3.0) * demand_h(d.col("o")(i, 0));
    s_mean += d.col("o")(i, 1);
  }
  s_mean /= static_cast<double>(n);
  const double me = eps.mean(), mv = v.mean();
  const double var_e = (eps.array() - me).square().mean();
  const double var_v = (v.array() - mv).square().mean();
  const double corr = ((eps.array() - me) * (v.array() - mv)).mean() / std::sqrt(var_e * var_v);
  CHECK(std::abs(s_mean - 4.0) < 0.05);
  CHECK(std::abs(corr - 0.5) < 0.02);
  CHECK(std::abs(var_e - 1.0) < 0.02);
}

TEST_CASE("high-dimensional demand design embeds price and season") {
  const Dataset lo = gen_demand_design(20, 0.5, 5, false);
  const Dataset hi = gen_demand_design(20, 0.5, 5, true);
  CHECK(hi.dim("x") == kDigitDim);
  CHECK(hi.dim("o") == kDigitDim + 1);
  CHECK(max_abs(hi.col("y") - lo.col("y")) == 0.0);
  CHECK(max_abs(hi.col("o").col(0) - lo.col("o").col(0)) == 0.0);
}

TEST_CASE("digit index fixtures and rounding") {
  CHECK(digit_index(0.0) == 5);
  CHECK(digit_index(4.0) == 9);
  CHECK(digit_index(-4.0) == 0);
  // exact halves round away from zero: 6.5 -> 7, 3.5 -> 4
  CHECK(digit_index(1.0) == 7);
  CHECK(digit_index(-1.0) == 4);
}

TEST_CASE("digit embedding: determinism, same-class distance and class separation") {
  const Vector a = digit_embed(0.0, 7, 3);
  const Vector b = digit_embed(0.0, 7, 3);
  CHECK(max_abs(a - b) == 0.0);
  CHECK(a.size() == kDigitDim);

  const DigitEmbedder e(7);
  const double expected = kDigitNoise * std::sqrt(2.0 * kDigitDim);
  for (std::uint64_t i = 0; i < 10; ++i) {
    const double same = (e.embed(0.1, i) - e.embed(0.2, i + 100)).norm();
    CHECK(std::abs(same - expected) < 0.15 * expected);
  }
  double closest = 1e300;
  for (int p = 0; p < 10; ++p)
    for (int q = p + 1; q < 10; ++q) closest = std::min(closest, (e.prototypes().row(p) - e.prototypes().row(q)).norm());
  CHECK(closest > 5.0 * expected);
}

TEST_CASE("linear gaussian iv") {
  CHECK(linear_gaussian_ols_slope(2.0, 1.0) == doctest::Approx(2.0 + 1.0 / 3.0));
  CHECK(linear_gaussian_ols_slope(2.0, 0.0) == 2.0);
  const Dataset one = gen_linear_gaussian_iv(1, 2.0, 1.0, 0);
  CHECK_NOTHROW(one.validate());
  CHECK(one.rows() == 1);

  const Dataset d = gen_linear_gaussian_iv(100000, 2.0, 1.0, 9);
  const Vector x = d.col("x").col(0), y = d.col("y").col(0), z = d.col("z").col(0);
  const double mx = x.mean(), my = y.mean(), mz = z.mean();
  const double ols = ((x.array() - mx) * (y.array() - my)).sum() / (x.array() - mx).square().sum();
  const double iv = ((z.array() - mz) * (y.array() - my)).sum() / ((z.array() - mz) * (x.array() - mx)).sum();
  CHECK(std::abs(ols - 2.0 - 1.0 / 3.0) < 0.02);
  CHECK(std::abs(iv - 2.0) < 0.03);
  CHECK(max_abs(*d.truth - 2.0 * x) == 0.0);
}

TEST_CASE("oos_mse fixtures and errors") {
  CHECK(oos_mse(Vector::Ones(3), Vector::Ones(3)) == 0.0);
  CHECK(oos_mse(Vector::Zero(2), Vector::Ones(2)) == 1.0);
  CHECK(oos_mse((Vector(3) << 1, 2, 3).finished(), (Vector(3) << 2, 2, 5).finished()) ==
        doctest::Approx(5.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(oos_mse(Vector::Ones(2), Vector::Ones(3)), DimensionError);
  CHECK_THROWS_AS(oos_mse(Vector(), Vector()), DimensionError);
}
