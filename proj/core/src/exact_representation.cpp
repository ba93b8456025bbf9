#include "speccausal/exact_representation.hpp"

#include "speccausal/error.hpp"

#include <algorithm>
#include <cmath>

namespace speccausal {

FeatureNetwork lookup_network(const Matrix& table) {
  NetworkSpec spec{{static_cast<int>(table.rows()), static_cast<int>(table.cols())}, {Activation::linear}, {false}};
  FeatureNetwork net(spec, 0);
  net.mutable_params().layers[0].weight = table.transpose();
  net.mutable_params().layers[0].bias.setZero();
  net.mark_updated();
  return net;
}

FeatureNetwork level_network(const std::vector<double>& levels, const Matrix& table) {
  const auto k = static_cast<Eigen::Index>(levels.size());
  if (k == 0 || table.rows() != k) throw DimensionError("level_network: table needs one row per level");
  std::vector<double> sorted = levels;
  std::sort(sorted.begin(), sorted.end());
  double gap = 1.0;
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i] == sorted[i - 1]) throw ConfigError("level_network: repeated level");
    gap = std::min(gap, sorted[i] - sorted[i - 1]);
  }
  const double delta = 0.5 * gap;
  NetworkSpec spec{{1, static_cast<int>(3 * k), static_cast<int>(table.cols())}, {Activation::relu, Activation::linear},
                   {false, false}};
  FeatureNetwork net(spec, 0);
  auto& l0 = net.mutable_params().layers[0];
  auto& l1 = net.mutable_params().layers[1];
  l0.weight.setOnes();
  Matrix hat = Matrix::Zero(k, 3 * k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double c = levels[static_cast<std::size_t>(i)];
    l0.bias(3 * i) = -(c - delta);
    l0.bias(3 * i + 1) = -c;
    l0.bias(3 * i + 2) = -(c + delta);
    // hat(y) = (relu(y - c + d) - 2 relu(y - c) + relu(y - c - d)) / d
    hat(i, 3 * i) = 1.0 / delta;
    hat(i, 3 * i + 1) = -2.0 / delta;
    hat(i, 3 * i + 2) = 1.0 / delta;
  }
  l1.weight = table.transpose() * hat;
  l1.bias.setZero();
  net.mark_updated();
  return net;
}

FeatureNetwork variable_network(const DiscreteVariable& var, const Matrix& table) {
  const auto k = static_cast<Eigen::Index>(var.cardinality());
  if (var.support.rows() == var.support.cols() && var.support.isApprox(Matrix::Identity(k, k))) {
    return lookup_network(table);
  }
  if (var.support.cols() == 1) {
    std::vector<double> levels(var.support.data(), var.support.data() + k);
    return level_network(levels, table);
  }
  throw ConfigError("variable_network: '" + var.name + "' is neither one-hot nor scalar");
}

IVRepresentation identity_iv_representation(int dim) {
  const Matrix I = Matrix::Identity(dim, dim);
  return {lookup_network(I), lookup_network(I)};
}

namespace {

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

ExactIVFactorization exact_iv_factorization(const DiscreteJointSpec& spec, double tol) {
  const auto kx = static_cast<Eigen::Index>(spec.variables[spec.index_of("x")].cardinality());
  const auto kz = static_cast<Eigen::Index>(spec.variables[spec.index_of("z")].cardinality());
  ExactIVFactorization out;
  out.px = to_vector(spec.marginal({"x"}));
  out.pz = to_vector(spec.marginal({"z"}));
  const auto pxz = spec.marginal({"x", "z"});
  Eigen::MatrixXd r(kx, kz);
  for (Eigen::Index x = 0; x < kx; ++x) {
    for (Eigen::Index z = 0; z < kz; ++z) {
      if (out.px(x) <= 0 || out.pz(z) <= 0) throw NumericError("exact_iv_factorization: zero marginal");
      r(x, z) = pxz[static_cast<std::size_t>(x * kz + z)] / (out.px(x) * out.pz(z));
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  Eigen::Index d = 0;
  while (d < s.size() && s(d) > tol * s(0)) ++d;
  const Eigen::VectorXd root = s.head(d).cwiseSqrt();
  out.phi = svd.matrixU().leftCols(d) * root.asDiagonal();
  out.psi = svd.matrixV().leftCols(d) * root.asDiagonal();
  return out;
}

IVRepresentation exact_iv_representation(const DiscreteJointSpec& spec) {
  const ExactIVFactorization f = exact_iv_factorization(spec);
  IVRepresentation rep{variable_network(spec.variables[spec.index_of("x")], f.phi),
                       variable_network(spec.variables[spec.index_of("z")], f.psi)};
  rep.validate();
  return rep;
}

Vector linearization_vector(const Matrix& phi, const Vector& px, const Vector& f) {
  if (phi.rows() != px.size() || f.size() != px.size()) throw DimensionError("linearization_vector: size mismatch");
  return phi.transpose() * (px.array() * f.array()).matrix();
}

ConditionalRepresentation exact_conditional_representation(const DiscreteJointSpec& spec) {
  ConditionalRepresentation rep;
  rep.setting = spec.has("o") ? Setting::ivoc : Setting::pcl;
  const std::string tname = rep.target_column();
  const std::string cname = rep.conditioner_column();
  const auto& tvar = spec.variables[spec.index_of(tname)];
  const auto& zvar = spec.variables[spec.index_of("z")];
  const auto& cvar = spec.variables[spec.index_of(cname)];
  const auto& yvar = spec.variables[spec.index_of("y")];
  const auto kt = static_cast<Eigen::Index>(tvar.cardinality());
  const auto kz = static_cast<Eigen::Index>(zvar.cardinality());
  const auto kc = static_cast<Eigen::Index>(cvar.cardinality());

  // Outcome levels sharing a value are one observation; merge them.
  DiscreteVariable ymerged{yvar.name, Matrix(0, yvar.support.cols())};
  Matrix merge = Matrix::Zero(static_cast<Eigen::Index>(yvar.cardinality()), 0);
  for (Eigen::Index l = 0; l < yvar.support.rows(); ++l) {
    Eigen::Index g = 0;
    while (g < ymerged.support.rows() && ymerged.support.row(g) != yvar.support.row(l)) ++g;
    if (g == ymerged.support.rows()) {
      ymerged.support.conservativeResize(g + 1, Eigen::NoChange);
      ymerged.support.row(g) = yvar.support.row(l);
      merge.conservativeResize(Eigen::NoChange, g + 1);
      merge.col(g).setZero();
    }
    merge(l, g) = 1.0;
  }
  const auto ky = static_cast<Eigen::Index>(ymerged.cardinality());

  const Vector pt = to_vector(spec.marginal({tname}));
  const Vector py = merge.transpose() * to_vector(spec.marginal({"y"}));
  const Matrix t_given = conditional_table(spec, tname, {cname, "z"});  // (c*kz + z) x kt
  const Matrix y_given = conditional_table(spec, "y", {cname, "z"}) * merge;

  rep.p_v = Tensor3(kt, kz, kc);
  rep.p_q = Tensor3(kt, ky, kc);
  for (Eigen::Index c = 0; c < kc; ++c) {
    Matrix V(kt, kz), W(ky, kz);
    for (Eigen::Index z = 0; z < kz; ++z) {
      for (Eigen::Index t = 0; t < kt; ++t) V(t, z) = pt(t) > 0 ? t_given(c * kz + z, t) / pt(t) : 0.0;
      for (Eigen::Index y = 0; y < ky; ++y) W(y, z) = py(y) > 0 ? y_given(c * kz + z, y) / py(y) : 0.0;
    }
    const Matrix Q = pseudo_inverse(V.transpose()) * W.transpose();
    const double err = (Q.transpose() * V - W).cwiseAbs().maxCoeff();
    if (err > 1e-9) {
      throw NumericError("exact_conditional_representation: W(c) is not realizable as Q(c)^T V(c) at level " +
                         std::to_string(c) + " (error " + std::to_string(err) + ")");
    }
    rep.p_v.slices[static_cast<std::size_t>(c)] = V;
    rep.p_q.slices[static_cast<std::size_t>(c)] = Q;
  }
  rep.phi = variable_network(tvar, Matrix::Identity(kt, kt));
  rep.psi = variable_network(zvar, Matrix::Identity(kz, kz));
  rep.xi = variable_network(cvar, Matrix::Identity(kc, kc));
  rep.nu = variable_network(ymerged, Matrix::Identity(ky, ky));
  rep.validate();
  return rep;
}

}  // namespace speccausal
