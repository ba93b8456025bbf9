#include "unit/helpers.hpp"

#include "speccausal/discrete.hpp"
#include "speccausal/error.hpp"

#include <doctest.h>

#include <cmath>

using namespace speccausal;
using testutil::max_abs;

namespace {

DiscreteJointSpec two_by_two() {
  DiscreteJointSpec s;
  s.variables = {one_hot_variable("x", 2), one_hot_variable("z", 2)};
  s.table = {0.4, 0.1, 0.1, 0.4};
  return s;
}

}  // namespace

TEST_CASE("joint validation") {
  DiscreteJointSpec s = two_by_two();
  CHECK_NOTHROW(s.validate());
  s.table[0] = 0.5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = two_by_two();
  s.table[0] = -0.1;
  s.table[1] = 0.6;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = two_by_two();
  s.table.pop_back();
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("flat indexing round trip and marginals") {
  const DiscreteJointSpec s = make_joint({one_hot_variable("a", 2), one_hot_variable("b", 3), one_hot_variable("c", 4)},
                                         [](const Assignment& a) { return 1.0 + a[0] + 2.0 * a[1] + 3.0 * a[2]; });
  for (std::size_t f = 0; f < 24; ++f) CHECK(s.flat_index(s.unflatten(f)) == f);
  CHECK(s.flat_index({1, 2, 3}) == 23);
  // marginal of (c, a) in that order against a direct sum
  const auto m = s.marginal({"c", "a"});
  REQUIRE(m.size() == 8);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t a = 0; a < 2; ++a) {
      double direct = 0;
      for (std::size_t b = 0; b < 3; ++b) direct += s.table[s.flat_index({a, b, c})];
      CHECK(std::abs(m[c * 2 + a] - direct) < 1e-15);
    }
  CHECK_THROWS_AS(s.index_of("q"), ConfigError);
}

TEST_CASE("ratio oracle fixtures") {
  CHECK(discrete_ratio_oracle(two_by_two(), 0, 0) == doctest::Approx(1.6).epsilon(1e-15));
  CHECK(discrete_ratio_oracle(two_by_two(), 0, 1) == doctest::Approx(0.4).epsilon(1e-15));
  const DiscreteJointSpec ind = independent_pair({0.2, 0.3, 0.5}, {0.6, 0.4});
  for (std::size_t x = 0; x < 3; ++x)
    for (std::size_t z = 0; z < 2; ++z) CHECK(std::abs(discrete_ratio_oracle(ind, x, z) - 1.0) < 1e-15);
  const DiscreteJointSpec zero = independent_pair({0.0, 1.0}, {0.5, 0.5});
  CHECK_THROWS_AS(discrete_ratio_oracle(zero, 0, 0), NumericError);
  CHECK_THROWS_AS(discrete_ratio_oracle(ind, 3, 0), DimensionError);
}

TEST_CASE("cosine toy has uniform marginals and the stated ratio") {
  const DiscreteJointSpec s = cosine_ratio_toy(8, 0.8);
  for (std::size_t x = 0; x < 8; ++x)
    for (std::size_t z = 0; z < 8; ++z) {
      const double expected = 1.0 + 0.8 * std::cos(2.0 * M_PI * (static_cast<double>(x) - static_cast<double>(z)) / 8.0);
      CHECK(std::abs(discrete_ratio_oracle(s, x, z) - expected) < 1e-12);
    }
  CHECK_THROWS_AS(cosine_ratio_toy(4, 1.0), ConfigError);
}

TEST_CASE("sampled empirical joint matches the table at n = 1e5") {
  const DiscreteJointSpec s = two_by_two();
  const Dataset d = gen_discrete_toy(s, 100000, 3);
  CHECK(d.setting == Setting::iv);
  CHECK(!d.has("y"));
  double counts[2][2] = {{0, 0}, {0, 0}};
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const int x = d.col("x")(i, 1) > 0.5 ? 1 : 0;
    const int z = d.col("z")(i, 1) > 0.5 ? 1 : 0;
    counts[x][z] += 1.0;
  }
  for (int x = 0; x < 2; ++x)
    for (int z = 0; z < 2; ++z) CHECK(std::abs(counts[x][z] / 1e5 - s.table[static_cast<std::size_t>(x * 2 + z)]) < 0.01);
  const Dataset again = gen_discrete_toy(s, 100, 3);
  CHECK(max_abs(again.col("x") - d.subset([] {
    std::vector<std::size_t> idx(100);
    for (std::size_t i = 0; i < 100; ++i) idx[i] = i;
    return idx;
  }()).col("x")) == 0.0);
}

TEST_CASE("population dataset carries the observed marginal as weights") {
  const DiscreteJointSpec s = default_pcl_spec();
  const Dataset pop = population_dataset(s);
  CHECK(pop.setting == Setting::pcl);
  CHECK(!pop.has("u"));
  REQUIRE(pop.weights.has_value());
  CHECK(std::abs(pop.weights->sum() - 1.0) < 1e-12);
  CHECK((pop.weights->array() > 0).all());
}

TEST_CASE("conditional tables are row-stochastic") {
  const DiscreteJointSpec s = default_pcl_spec();
  const Matrix c = conditional_table(s, "w", {"x", "z"});
  CHECK(c.rows() == 6);
  CHECK(c.cols() == 2);
  CHECK(max_abs(c.rowwise().sum() - Vector::Ones(6)) < 1e-14);
}

TEST_CASE("bridge: outcome depending on the treatment only gives a bridge constant in w") {
  // y level k belongs to x = k / 2
  const DiscreteJointSpec s = make_joint(
      {one_hot_variable("u", 2), one_hot_variable("z", 2), one_hot_variable("x", 2), one_hot_variable("w", 2),
       scalar_variable("y", {0.0, 2.0, 5.0, 9.0})},
      [](const Assignment& a) {
        const std::size_t u = a[0], z = a[1], x = a[2], w = a[3], y = a[4];
        if (y / 2 != x) return 0.0;
        const double pz = z == u ? 0.7 : 0.3;
        const double px = x == z ? 0.6 : 0.4;
        const double pw = w == u ? 0.8 : 0.2;
        const double py = (y % 2 == 0) ? 0.25 + 0.5 * static_cast<double>(x) * 0.5 : 0.75 - 0.5 * static_cast<double>(x) * 0.5;
        return 0.5 * pz * px * pw * py;
      });
  const BridgeSolution b = solve_bridge_exact(s);
  // E[y | x = 0] = 0.25 * 0 + 0.75 * 2, E[y | x = 1] = 0.5 * 5 + 0.5 * 9
  CHECK(std::abs(b.h(0, 0) - 1.5) < 1e-10);
  CHECK(std::abs(b.h(0, 1) - 1.5) < 1e-10);
  CHECK(std::abs(b.h(1, 0) - 7.0) < 1e-10);
  CHECK(std::abs(b.h(1, 1) - 7.0) < 1e-10);
  CHECK(std::abs(b.effect(0) - 1.5) < 1e-10);
  CHECK(std::abs(b.effect(1) - 7.0) < 1e-10);
}

TEST_CASE("bridge on the default proxy model: residual, hand solve and interventional mean") {
  const DiscreteJointSpec s = default_pcl_spec();
  const BridgeSolution b = solve_bridge_exact(s);
  CHECK(b.max_residual < 1e-10);

  // Independent hand solve for x = 0 from the first two instrument levels via Cramer's rule.
  const Matrix P = conditional_table(s, "w", {"x", "z"});
  const Matrix Py = conditional_table(s, "y", {"x", "z"});
  const auto& ylev = s.variables[s.index_of("y")].support;
  const double r0 = Py.row(0).dot(ylev.col(0)), r1 = Py.row(1).dot(ylev.col(0));
  const double det = P(0, 0) * P(1, 1) - P(0, 1) * P(1, 0);
  const double h0 = (r0 * P(1, 1) - P(0, 1) * r1) / det;
  const double h1 = (P(0, 0) * r1 - r0 * P(1, 0)) / det;
  CHECK(std::abs(b.h(0, 0) - h0) < 1e-10);
  CHECK(std::abs(b.h(0, 1) - h1) < 1e-10);

  // y = m(x, u) + symmetric noise with p(u) = 1/2: effect(x) = (m(x, 0) + m(x, 1)) / 2
  const Vector truth = interventional_mean(s);
  CHECK(std::abs(truth(0) - 1.5) < 1e-12);
  CHECK(std::abs(truth(1) - 6.0) < 1e-12);
  CHECK(max_abs(b.effect - truth) < 1e-10);
}

TEST_CASE("bridge on a rank-deficient proxy advises a different spec") {
  // w independent of u: p(w | x, z) has identical rows
  const DiscreteJointSpec s = make_joint(
      {one_hot_variable("u", 2), one_hot_variable("z", 2), one_hot_variable("x", 2), one_hot_variable("w", 2),
       scalar_variable("y", {0.0, 1.0})},
      [](const Assignment& a) { return (a[2] == a[4] ? 1.0 : 0.0) * (a[1] == a[0] ? 0.7 : 0.3); });
  try {
    solve_bridge_exact(s);
    FAIL("expected an error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("spec") != std::string::npos);
  }
}

TEST_CASE("pcl samples carry the exact effect as truth and respect w independent of (x, z) given u") {
  const DiscreteJointSpec s = default_pcl_spec();
  const Dataset d = gen_pcl_discrete(s, 20000, 5);
  CHECK(d.setting == Setting::pcl);
  REQUIRE(d.truth.has_value());
  const BridgeSolution b = solve_bridge_exact(s);
  for (Eigen::Index i = 0; i < 50; ++i) {
    const Eigen::Index x = d.col("x")(i, 1) > 0.5 ? 1 : 0;
    CHECK((*d.truth)(i) == b.effect(x));
  }
  // Within the population table: p(w | u, x, z) = p(w | u).
  const Matrix w_uxz = conditional_table(s, "w", {"u", "x", "z"});
  const Matrix w_u = conditional_table(s, "w", {"u"});
  for (Eigen::Index r = 0; r < w_uxz.rows(); ++r) CHECK(max_abs(w_uxz.row(r) - w_u.row(r / 6)) < 1e-12);
  // Empirically, a loose contingency check of w against z within x.
  double n_w1[2][3] = {}, n_[2][3] = {};
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    Eigen::Index x = 0, z = 0;
    d.col("x").row(i).maxCoeff(&x);
    d.col("z").row(i).maxCoeff(&z);
    n_[x][z] += 1.0;
    if (d.col("w")(i, 1) > 0.5) n_w1[x][z] += 1.0;
  }
  const Matrix w_xz = conditional_table(s, "w", {"x", "z"});
  for (int x = 0; x < 2; ++x)
    for (int z = 0; z < 3; ++z) CHECK(std::abs(n_w1[x][z] / n_[x][z] - w_xz(x * 3 + z, 1)) < 0.05);
}

TEST_CASE("iv-oc exact solve recovers the additive structural table") {
  // u is independent of (z, o) and the confounder shift has mean zero, so the structural table is identified exactly
  const Matrix f = solve_iv_exact(default_ivoc_spec());
  const Matrix expected = (Matrix(3, 2) << 1.0, 3.0, 2.0, -1.0, 4.0, 0.0).finished();
  CHECK(max_abs(f - expected) < 1e-10);
}

TEST_CASE("iv exact solve without an observed confounder has a single column") {
  const DiscreteJointSpec s = make_joint(
      {one_hot_variable("z", 2), one_hot_variable("x", 2), scalar_variable("y", {1.0, 4.0})},
      [](const Assignment& a) { return (a[0] == a[1] ? 0.8 : 0.2) * (a[1] == a[2] ? 1.0 : 0.0); });
  const Matrix f = solve_iv_exact(s);
  CHECK(f.cols() == 1);
  CHECK(std::abs(f(0, 0) - 1.0) < 1e-10);
  CHECK(std::abs(f(1, 0) - 4.0) < 1e-10);
}
