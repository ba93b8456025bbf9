#include "unit/helpers.hpp"

#include "speccausal/discrete.hpp"
#include "speccausal/error.hpp"
#include "speccausal/exact_representation.hpp"

#include <doctest.h>

using namespace speccausal;
using testutil::gaussian_vec;
using testutil::max_abs;

namespace {

DiscreteJointSpec random_pair(std::size_t kx, std::size_t kz, Rng& rng) {
  return make_joint({one_hot_variable("x", kx), one_hot_variable("z", kz)},
                    [&](const Assignment&) { return 0.05 + rng.uniform(); });
}

Matrix joint_xz(const DiscreteJointSpec& s, Eigen::Index kx, Eigen::Index kz) {
  const auto m = s.marginal({"x", "z"});
  Matrix out(kx, kz);
  for (Eigen::Index x = 0; x < kx; ++x)
    for (Eigen::Index z = 0; z < kz; ++z) out(x, z) = m[static_cast<std::size_t>(x * kz + z)];
  return out;
}

}  // namespace

TEST_CASE("lookup network emits table rows for one-hot levels") {
  const Matrix table = (Matrix(3, 2) << 1, 2, 3, 4, 5, 6).finished();
  const FeatureNetwork net = lookup_network(table);
  CHECK(max_abs(evaluate(net, Matrix::Identity(3, 3)) - table) == 0.0);
}

TEST_CASE("level network is exact at its levels, in any order") {
  const std::vector<double> levels{3.0, -1.0, 0.5, 2.0};
  const Matrix table = (Matrix(4, 3) << 1, 0, 2, 0, 1, -1, 4, 4, 4, -2, 0.5, 0).finished();
  const FeatureNetwork net = level_network(levels, table);
  Matrix in(4, 1);
  for (int i = 0; i < 4; ++i) in(i, 0) = levels[static_cast<std::size_t>(i)];
  CHECK(max_abs(evaluate(net, in) - table) < 1e-12);
  CHECK_THROWS_AS(level_network({1.0, 1.0}, Matrix::Zero(2, 1)), ConfigError);
  CHECK_THROWS_AS(level_network({1.0, 2.0}, Matrix::Zero(3, 1)), DimensionError);
}

TEST_CASE("exact iv factorization reproduces the ratio table") {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto kx = 2 + rng.below(5), kz = 2 + rng.below(5);
    const DiscreteJointSpec s = random_pair(kx, kz, rng);
    const ExactIVFactorization f = exact_iv_factorization(s);
    const Matrix r = f.phi * f.psi.transpose();
    for (std::size_t x = 0; x < kx; ++x)
      for (std::size_t z = 0; z < kz; ++z)
        CHECK(std::abs(r(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(z)) - discrete_ratio_oracle(s, x, z)) < 1e-12);
  }
  // an independent pair factorizes with a single constant feature
  const ExactIVFactorization ind = exact_iv_factorization(independent_pair({0.3, 0.7}, {0.5, 0.2, 0.3}));
  CHECK(ind.phi.cols() == 1);
}

TEST_CASE("conditional expectations are linear in the instrument features") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto kx = static_cast<Eigen::Index>(2 + rng.below(5)), kz = static_cast<Eigen::Index>(2 + rng.below(5));
    const DiscreteJointSpec s = random_pair(static_cast<std::size_t>(kx), static_cast<std::size_t>(kz), rng);
    const ExactIVFactorization fac = exact_iv_factorization(s);
    const Matrix pxz = joint_xz(s, kx, kz);
    for (int k = 0; k < 10; ++k) {
      const Vector f = gaussian_vec(kx, rng);
      const Vector v = linearization_vector(fac.phi, fac.px, f);
      for (Eigen::Index z = 0; z < kz; ++z) {
        const double brute = pxz.col(z).dot(f) / pxz.col(z).sum();
        CHECK(std::abs(brute - fac.psi.row(z).dot(v)) < 1e-12);
      }
    }
  }
  CHECK_THROWS_AS(linearization_vector(Matrix::Ones(3, 2), Vector::Ones(2), Vector::Ones(3)), DimensionError);
}

TEST_CASE("exact iv representation as networks") {
  const DiscreteJointSpec s = cosine_ratio_toy(5);
  const IVRepresentation rep = exact_iv_representation(s);
  const Matrix r = score_iv(rep, Matrix::Identity(5, 5), Matrix::Identity(5, 5));
  for (std::size_t x = 0; x < 5; ++x)
    for (std::size_t z = 0; z < 5; ++z)
      CHECK(std::abs(r(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(z)) - discrete_ratio_oracle(s, x, z)) < 1e-12);
  const IVRepresentation id = identity_iv_representation(3);
  CHECK(max_abs(evaluate(id.phi, Matrix::Identity(3, 3)) - Matrix::Identity(3, 3)) == 0.0);
}

TEST_CASE("exact conditional representation reproduces both conditional laws") {
  for (const DiscreteJointSpec& s : {default_ivoc_spec(), default_pcl_spec()}) {
    const ConditionalRepresentation rep = exact_conditional_representation(s);
    const std::string t = rep.target_column(), c = rep.conditioner_column();
    const Matrix t_given = conditional_table(s, t, {c, "z"});
    const auto pt = s.marginal({t});
    const auto kc = static_cast<Eigen::Index>(s.variables[s.index_of(c)].cardinality());
    const auto kz = static_cast<Eigen::Index>(s.variables[s.index_of("z")].cardinality());
    const auto kt = static_cast<Eigen::Index>(pt.size());
    for (Eigen::Index ci = 0; ci < kc; ++ci)
      for (Eigen::Index zi = 0; zi < kz; ++zi)
        for (Eigen::Index ti = 0; ti < kt; ++ti) {
          const Vector tv = Matrix::Identity(kt, kt).col(ti), zv = Matrix::Identity(kz, kz).col(zi),
                       cv = Matrix::Identity(kc, kc).col(ci);
          const double score = rep.setting == Setting::ivoc ? score_ivoc_x(rep, tv, zv, cv) : score_pcl_w(rep, tv, cv, zv);
          CHECK(std::abs(pt[static_cast<std::size_t>(ti)] * score - t_given(ci * kz + zi, ti)) < 1e-12);
        }

    // p(y | z, c) = p(y) nu(y)^T Q(c)^T V(c) psi(z), with y summed over its distinct values
    const auto& yvar = s.variables[s.index_of("y")];
    const Matrix y_given = conditional_table(s, "y", {c, "z"});
    const auto py = s.marginal({"y"});
    for (Eigen::Index ci = 0; ci < kc; ++ci)
      for (Eigen::Index zi = 0; zi < kz; ++zi)
        for (Eigen::Index yi = 0; yi < yvar.support.rows(); ++yi) {
          double p_value = 0, py_value = 0;
          for (Eigen::Index l = 0; l < yvar.support.rows(); ++l) {
            if (yvar.support(l, 0) != yvar.support(yi, 0)) continue;
            p_value += y_given(ci * kz + zi, l);
            py_value += py[static_cast<std::size_t>(l)];
          }
          const Vector yv = yvar.support.row(yi).transpose(), zv = Matrix::Identity(kz, kz).col(zi),
                       cv = Matrix::Identity(kc, kc).col(ci);
          const double score = rep.setting == Setting::ivoc ? score_ivoc_y(rep, yv, zv, cv) : score_pcl_y(rep, yv, cv, zv);
          CHECK(std::abs(py_value * score - p_value) < 1e-9);
        }
  }
}

TEST_CASE("conditional linearization with a conditioner-dependent coefficient") {
  // E[f(X, o) | z, o] = <psi(z), V(o)^T sum_x p(x) phi(x) f(x, o)>
  Rng rng(3);
  const DiscreteJointSpec s = default_ivoc_spec();
  const ConditionalRepresentation rep = exact_conditional_representation(s);
  const Matrix x_given = conditional_table(s, "x", {"o", "z"});
  const auto px = s.marginal({"x"});
  Vector pxv(3);
  for (int i = 0; i < 3; ++i) pxv(i) = px[static_cast<std::size_t>(i)];
  const Matrix phi = evaluate(rep.phi, Matrix::Identity(3, 3));
  const Matrix psi = evaluate(rep.psi, Matrix::Identity(3, 3));
  for (int k = 0; k < 10; ++k) {
    const Matrix f = testutil::gaussian(3, 2, rng);
    for (Eigen::Index o = 0; o < 2; ++o) {
      const Vector xi = evaluate(rep.xi, Matrix::Identity(2, 2).row(o)).row(0).transpose();
      const Vector v = rep.V(xi).transpose() * linearization_vector(phi, pxv, f.col(o));
      for (Eigen::Index z = 0; z < 3; ++z) {
        const double brute = x_given.row(o * 3 + z).dot(f.col(o));
        CHECK(std::abs(brute - psi.row(z).dot(v)) < 1e-12);
      }
    }
  }
}
