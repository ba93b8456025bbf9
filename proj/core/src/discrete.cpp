#include "speccausal/discrete.hpp"

#include "speccausal/error.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace speccausal {

DiscreteVariable one_hot_variable(const std::string& name, std::size_t k) {
  const auto n = static_cast<Eigen::Index>(k);
  return {name, Matrix::Identity(n, n)};
}

DiscreteVariable scalar_variable(const std::string& name, const std::vector<double>& levels) {
  Matrix s(static_cast<Eigen::Index>(levels.size()), 1);
  for (std::size_t i = 0; i < levels.size(); ++i) s(static_cast<Eigen::Index>(i), 0) = levels[i];
  return {name, s};
}

std::vector<std::size_t> DiscreteJointSpec::cardinalities() const {
  std::vector<std::size_t> c;
  for (const auto& v : variables) c.push_back(v.cardinality());
  return c;
}

void DiscreteJointSpec::validate() const {
  if (variables.empty()) throw ConfigError("discrete spec has no variables");
  std::size_t total = 1;
  for (const auto& v : variables) {
    if (v.cardinality() == 0) throw ConfigError("discrete variable '" + v.name + "' has empty support");
    total *= v.cardinality();
  }
  if (table.size() != total) throw ConfigError("discrete table has " + std::to_string(table.size()) + " entries, expected " + std::to_string(total));
  double sum = 0;
  for (double p : table) {
    if (!(p >= 0) || !std::isfinite(p)) throw ConfigError("discrete table has a negative or non-finite entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("discrete table sums to " + std::to_string(sum) + ", not 1");
}

std::size_t DiscreteJointSpec::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < variables.size(); ++i) {
    if (variables[i].name == name) return i;
  }
  throw ConfigError("discrete spec has no variable '" + name + "'");
}

bool DiscreteJointSpec::has(const std::string& name) const {
  for (const auto& v : variables) {
    if (v.name == name) return true;
  }
  return false;
}

std::size_t DiscreteJointSpec::flat_index(const std::vector<std::size_t>& a) const {
  std::size_t f = 0;
  for (std::size_t i = 0; i < variables.size(); ++i) f = f * variables[i].cardinality() + a[i];
  return f;
}

std::vector<std::size_t> DiscreteJointSpec::unflatten(std::size_t flat) const {
  std::vector<std::size_t> a(variables.size());
  for (std::size_t i = variables.size(); i-- > 0;) {
    a[i] = flat % variables[i].cardinality();
    flat /= variables[i].cardinality();
  }
  return a;
}

std::vector<double> DiscreteJointSpec::marginal(const std::vector<std::string>& names) const {
  std::vector<std::size_t> idx, card;
  std::size_t total = 1;
  for (const auto& n : names) {
    idx.push_back(index_of(n));
    card.push_back(variables[idx.back()].cardinality());
    total *= card.back();
  }
  std::vector<double> m(total, 0.0);
  for (std::size_t f = 0; f < table.size(); ++f) {
    if (table[f] == 0.0) continue;
    const auto a = unflatten(f);
    std::size_t g = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) g = g * card[k] + a[idx[k]];
    m[g] += table[f];
  }
  return m;
}

DiscreteJointSpec make_joint(std::vector<DiscreteVariable> variables,
                             const std::function<double(const Assignment&)>& weight) {
  DiscreteJointSpec s;
  s.variables = std::move(variables);
  std::size_t total = 1;
  for (const auto& v : s.variables) total *= v.cardinality();
  s.table.resize(total);
  double sum = 0;
  for (std::size_t f = 0; f < total; ++f) {
    s.table[f] = weight(s.unflatten(f));
    if (s.table[f] < 0) throw ConfigError("make_joint: negative weight");
    sum += s.table[f];
  }
  if (!(sum > 0)) throw ConfigError("make_joint: weights sum to zero");
  for (double& p : s.table) p /= sum;
  s.validate();
  return s;
}

std::vector<Assignment> sample_assignments(const DiscreteJointSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  std::vector<double> cumulative(spec.table.size());
  std::partial_sum(spec.table.begin(), spec.table.end(), cumulative.begin());
  std::vector<Assignment> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(spec.unflatten(rng.categorical(cumulative)));
  return out;
}

namespace {

Setting infer_setting(const DiscreteJointSpec& spec) {
  if (spec.has("o")) return Setting::ivoc;
  if (spec.has("w")) return Setting::pcl;
  return Setting::iv;
}

Dataset dataset_from_assignments(const DiscreteJointSpec& spec, const std::vector<Assignment>& rows) {
  Dataset d;
  d.setting = infer_setting(spec);
  const auto n = static_cast<Eigen::Index>(rows.size());
  for (std::size_t k = 0; k < spec.variables.size(); ++k) {
    const auto& var = spec.variables[k];
    if (var.name == "u") continue;
    Matrix col(n, var.support.cols());
    for (Eigen::Index i = 0; i < n; ++i) col.row(i) = var.support.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)][k]));
    d.columns.emplace(var.name, std::move(col));
  }
  return d;
}

double level_value(const DiscreteVariable& v, std::size_t level) {
  if (v.support.cols() != 1) throw ConfigError("variable '" + v.name + "' must be scalar-valued here");
  return v.support(static_cast<Eigen::Index>(level), 0);
}

}  // namespace

Dataset gen_discrete_toy(const DiscreteJointSpec& spec, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d = dataset_from_assignments(spec, sample_assignments(spec, n, rng));
  d.metadata = {{"generator", "discrete"}, {"n", n}, {"seed", seed}};
  return d;
}

Dataset population_dataset(const DiscreteJointSpec& spec) {
  spec.validate();
  std::vector<std::string> observed;
  for (const auto& v : spec.variables) {
    if (v.name != "u") observed.push_back(v.name);
  }
  const auto m = spec.marginal(observed);
  DiscreteJointSpec obs;
  for (const auto& name : observed) obs.variables.push_back(spec.variables[spec.index_of(name)]);
  obs.table = m;
  std::vector<Assignment> rows;
  std::vector<double> w;
  for (std::size_t f = 0; f < m.size(); ++f) {
    if (m[f] <= 0) continue;
    rows.push_back(obs.unflatten(f));
    w.push_back(m[f]);
  }
  Dataset d = dataset_from_assignments(obs, rows);
  d.setting = infer_setting(spec);
  d.weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  d.metadata = {{"generator", "discrete_population"}};
  return d;
}

double discrete_ratio_oracle(const DiscreteJointSpec& spec, std::size_t x, std::size_t z) {
  const auto kx = spec.variables[spec.index_of("x")].cardinality();
  const auto kz = spec.variables[spec.index_of("z")].cardinality();
  if (x >= kx || z >= kz) throw DimensionError("discrete_ratio_oracle: level out of range");
  const auto pxz = spec.marginal({"x", "z"});
  const auto px = spec.marginal({"x"});
  const auto pz = spec.marginal({"z"});
  if (px[x] == 0.0 || pz[z] == 0.0) throw NumericError("discrete_ratio_oracle: zero marginal at (" + std::to_string(x) + ", " + std::to_string(z) + ")");
  return pxz[x * kz + z] / (px[x] * pz[z]);
}

DiscreteJointSpec cosine_ratio_toy(std::size_t k, double amplitude) {
  if (std::abs(amplitude) >= 1.0) throw ConfigError("cosine_ratio_toy: |amplitude| must be < 1");
  const double kk = static_cast<double>(k);
  return make_joint({one_hot_variable("x", k), one_hot_variable("z", k)}, [&](const Assignment& a) {
    const double diff = static_cast<double>(a[0]) - static_cast<double>(a[1]);
    return 1.0 + amplitude * std::cos(2.0 * std::numbers::pi * diff / kk);
  });
}

DiscreteJointSpec independent_pair(const std::vector<double>& px, const std::vector<double>& pz) {
  return make_joint({one_hot_variable("x", px.size()), one_hot_variable("z", pz.size())},
                    [&](const Assignment& a) { return px[a[0]] * pz[a[1]]; });
}

Matrix conditional_table(const DiscreteJointSpec& spec, const std::string& target,
                         const std::vector<std::string>& given) {
  std::vector<std::string> names = given;
  names.push_back(target);
  const auto joint = spec.marginal(names);
  const auto kt = spec.variables[spec.index_of(target)].cardinality();
  const std::size_t rows = joint.size() / kt;
  Matrix c = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(kt));
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t t = 0; t < kt; ++t) s += joint[r * kt + t];
    if (s <= 0) continue;
    for (std::size_t t = 0; t < kt; ++t) c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = joint[r * kt + t] / s;
  }
  return c;
}

namespace {

// E[Y | given] for every configuration of `given` (row-major).
Vector conditional_mean_y(const DiscreteJointSpec& spec, const std::vector<std::string>& given) {
  const Matrix c = conditional_table(spec, "y", given);
  const auto& y = spec.variables[spec.index_of("y")];
  Vector levels(static_cast<Eigen::Index>(y.cardinality()));
  for (std::size_t i = 0; i < y.cardinality(); ++i) levels(static_cast<Eigen::Index>(i)) = level_value(y, i);
  return c * levels;
}

}  // namespace

BridgeSolution solve_bridge_exact(const DiscreteJointSpec& spec) {
  spec.validate();
  const auto kx = spec.variables[spec.index_of("x")].cardinality();
  const auto kz = spec.variables[spec.index_of("z")].cardinality();
  const auto kw = spec.variables[spec.index_of("w")].cardinality();
  const Matrix pw_xz = conditional_table(spec, "w", {"x", "z"});  // (x*kz + z) x kw
  const Vector ey_xz = conditional_mean_y(spec, {"x", "z"});
  const auto pw = spec.marginal({"w"});
  BridgeSolution sol;
  sol.h.resize(static_cast<Eigen::Index>(kx), static_cast<Eigen::Index>(kw));
  sol.effect.resize(static_cast<Eigen::Index>(kx));
  for (std::size_t x = 0; x < kx; ++x) {
    const Matrix P = pw_xz.middleRows(static_cast<Eigen::Index>(x * kz), static_cast<Eigen::Index>(kz));
    const Vector r = ey_xz.segment(static_cast<Eigen::Index>(x * kz), static_cast<Eigen::Index>(kz));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(P)};
    const auto& s = svd.singularValues();
    if (s.size() < static_cast<Eigen::Index>(kw) || s(s.size() - 1) <= 1e-10 * s(0)) {
      throw NumericError("solve_bridge_exact: p(w|x=" + std::to_string(x) +
                         ", z) is rank deficient; choose a spec with a more informative treatment proxy");
    }
    const Vector h = pseudo_inverse(P) * r;
    const double res = (P * h - r).cwiseAbs().maxCoeff();
    sol.max_residual = std::max(sol.max_residual, res);
    sol.h.row(static_cast<Eigen::Index>(x)) = h.transpose();
    double e = 0;
    for (std::size_t w = 0; w < kw; ++w) e += pw[w] * h(static_cast<Eigen::Index>(w));
    sol.effect(static_cast<Eigen::Index>(x)) = e;
  }
  if (sol.max_residual > 1e-10) {
    throw NumericError("solve_bridge_exact: no exact bridge exists (residual " + std::to_string(sol.max_residual) + ")");
  }
  return sol;
}

Vector interventional_mean(const DiscreteJointSpec& spec) {
  const auto kx = spec.variables[spec.index_of("x")].cardinality();
  const auto ku = spec.variables[spec.index_of("u")].cardinality();
  const Vector ey_xu = conditional_mean_y(spec, {"x", "u"});
  const auto pu = spec.marginal({"u"});
  Vector out = Vector::Zero(static_cast<Eigen::Index>(kx));
  for (std::size_t x = 0; x < kx; ++x) {
    for (std::size_t u = 0; u < ku; ++u) out(static_cast<Eigen::Index>(x)) += pu[u] * ey_xu(static_cast<Eigen::Index>(x * ku + u));
  }
  return out;
}

DiscreteJointSpec default_pcl_spec() {
  // y = m(x, u) + noise with noise in {-0.5, +0.5}
  const double m[2][2] = {{0.0, 3.0}, {4.0, 8.0}};
  std::vector<double> levels;
  for (int x = 0; x < 2; ++x) {
    for (int u = 0; u < 2; ++u) {
      levels.push_back(m[x][u] - 0.5);
      levels.push_back(m[x][u] + 0.5);
    }
  }
  const double pz_u[2][3] = {{0.6, 0.3, 0.1}, {0.1, 0.3, 0.6}};
  const double px1_zu[2][3] = {{0.2, 0.35, 0.5}, {0.5, 0.65, 0.8}};
  const double pw_u[2][2] = {{0.8, 0.2}, {0.25, 0.75}};
  // variable order: u, z, x, w, y
  return make_joint({one_hot_variable("u", 2), one_hot_variable("z", 3), one_hot_variable("x", 2),
                     one_hot_variable("w", 2), scalar_variable("y", levels)},
                    [&](const Assignment& a) {
                      const std::size_t u = a[0], z = a[1], x = a[2], w = a[3], y = a[4];
                      // level y belongs to (x', u') = (y / 4, (y / 2) % 2)
                      if (y / 4 != x || (y / 2) % 2 != u) return 0.0;
                      const double px = x == 1 ? px1_zu[u][z] : 1.0 - px1_zu[u][z];
                      return 0.5 * pz_u[u][z] * px * pw_u[u][w] * 0.5;
                    });
}

Dataset gen_pcl_discrete(const DiscreteJointSpec& spec, std::size_t n, std::uint64_t seed) {
  const BridgeSolution bridge = solve_bridge_exact(spec);
  Rng rng(seed);
  const auto rows = sample_assignments(spec, n, rng);
  Dataset d = dataset_from_assignments(spec, rows);
  d.setting = Setting::pcl;
  const std::size_t xi = spec.index_of("x");
  Vector truth(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) truth(static_cast<Eigen::Index>(i)) = bridge.effect(static_cast<Eigen::Index>(rows[i][xi]));
  d.truth = std::move(truth);
  d.metadata = {{"generator", "pcl_discrete"}, {"n", n}, {"seed", seed}};
  return d;
}

Matrix solve_iv_exact(const DiscreteJointSpec& spec) {
  const auto kx = spec.variables[spec.index_of("x")].cardinality();
  const auto kz = spec.variables[spec.index_of("z")].cardinality();
  const bool has_o = spec.has("o");
  const auto ko = has_o ? spec.variables[spec.index_of("o")].cardinality() : std::size_t{1};
  const std::vector<std::string> given = has_o ? std::vector<std::string>{"o", "z"} : std::vector<std::string>{"z"};
  const Matrix px = conditional_table(spec, "x", given);  // (o*kz + z) x kx
  const Vector ey = conditional_mean_y(spec, given);
  Matrix f(static_cast<Eigen::Index>(kx), static_cast<Eigen::Index>(ko));
  for (std::size_t o = 0; o < ko; ++o) {
    const Matrix A = px.middleRows(static_cast<Eigen::Index>(o * kz), static_cast<Eigen::Index>(kz));
    const Vector r = ey.segment(static_cast<Eigen::Index>(o * kz), static_cast<Eigen::Index>(kz));
    f.col(static_cast<Eigen::Index>(o)) = pseudo_inverse(A) * r;
  }
  return f;
}

DiscreteJointSpec default_ivoc_spec() {
  const double f[3][2] = {{1.0, 3.0}, {2.0, -1.0}, {4.0, 0.0}};
  const double c[2] = {-1.0, 1.0};
  std::vector<double> levels;
  for (int x = 0; x < 3; ++x) {
    for (int o = 0; o < 2; ++o) {
      for (int u = 0; u < 2; ++u) {
        levels.push_back(f[x][o] + c[u] - 0.5);
        levels.push_back(f[x][o] + c[u] + 0.5);
      }
    }
  }
  // variable order: u, o, z, x, y
  return make_joint({one_hot_variable("u", 2), one_hot_variable("o", 2), one_hot_variable("z", 3),
                     one_hot_variable("x", 3), scalar_variable("y", levels)},
                    [&](const Assignment& a) {
                      const std::size_t u = a[0], o = a[1], z = a[2], x = a[3], y = a[4];
                      if (y / 8 != x || (y / 4) % 2 != o || (y / 2) % 2 != u) return 0.0;
                      // treatment follows the instrument, pushed one level up by the confounder
                      double px = x == z ? 0.6 : 0.2;
                      if (u == 1 && x == (z + 1) % 3) px += 0.15;
                      if (u == 1 && x == z) px -= 0.15;
                      if (o == 1 && x == 2) px += 0.1;
                      if (o == 1) px /= 1.1;
                      return 0.5 * 0.5 * (1.0 / 3.0) * px * 0.5;
                    });
}

}  // namespace speccausal
