#include "speccausal/saddle.hpp"

#include <cmath>

namespace speccausal {

BaselineKind parse_baseline(const std::string& s) {
  if (s == "direct_ridge") return BaselineKind::direct_ridge;
  if (s == "two_stage_ls") return BaselineKind::two_stage_ls;
  throw ConfigError("unknown baseline '" + s + "' (expected direct_ridge or two_stage_ls)");
}

std::string to_string(BaselineKind k) { return k == BaselineKind::direct_ridge ? "direct_ridge" : "two_stage_ls"; }

namespace {

Matrix hstack(const Dataset& d, const std::vector<std::string>& names) {
  Eigen::Index width = 0;
  for (const auto& n : names) width += d.dim(n);
  Matrix out(d.rows(), width);
  Eigen::Index at = 0;
  for (const auto& n : names) {
    out.middleCols(at, d.dim(n)) = d.col(n);
    at += d.dim(n);
  }
  return out;
}

struct WeightedLinear {
  Vector coef;
  double intercept = 0;
};

// min sum_i w_i (y_i - c - x_i^T beta)^2 + lambda |beta|^2 with normalized weights.
WeightedLinear fit_weighted(const Matrix& X, const Vector& y, const Vector& w, double lambda) {
  const Eigen::RowVectorXd xbar = (X.array().colwise() * w.array()).colwise().sum();
  const double ybar = w.dot(y);
  const Vector sw = w.cwiseSqrt();
  const Matrix Xc = ((X.rowwise() - xbar).array().colwise() * sw.array()).matrix();
  const Vector yc = ((y.array() - ybar) * sw.array()).matrix();
  WeightedLinear out;
  // Collinear designs (one-hot columns next to the intercept) get the minimum-norm fit when lambda is 0.
  out.coef = lambda > 0 ? ridge_regression(Xc, yc, lambda) : Vector(pseudo_inverse(Xc) * yc);
  out.intercept = ybar - xbar.dot(out.coef);
  return out;
}

}  // namespace

LinearPredictor baseline_fit(BaselineKind kind, const Dataset& data, double lambda) {
  data.validate();
  if (lambda < 0) throw ConfigError("baseline lambda must be >= 0");
  if (data.dim("y") != 1) throw DimensionError("baseline_fit: outcome must be scalar");
  const Vector w = data.normalized_weights();
  const Vector y = data.col("y").col(0);
  std::vector<std::string> observables;
  if (data.setting == Setting::ivoc) observables.push_back("o");

  LinearPredictor p;
  p.inputs = {"x"};
  p.inputs.insert(p.inputs.end(), observables.begin(), observables.end());

  if (kind == BaselineKind::direct_ridge) {
    const WeightedLinear fit = fit_weighted(hstack(data, p.inputs), y, w, lambda);
    p.coef = fit.coef;
    p.intercept = fit.intercept;
    return p;
  }
  if (data.setting == Setting::pcl) throw ConfigError("two_stage_ls needs an IV or IV-OC dataset");

  std::vector<std::string> first_inputs = {"z"};
  first_inputs.insert(first_inputs.end(), observables.begin(), observables.end());
  const Matrix Z = hstack(data, first_inputs);
  const Matrix& zcol = data.col("z");
  for (Eigen::Index j = 0; j < zcol.cols(); ++j) {
    const double mean = w.dot(zcol.col(j));
    const double var = w.dot(((zcol.col(j).array() - mean).square()).matrix());
    if (!(var > 1e-14 * (1.0 + mean * mean))) {
      throw NumericError("two_stage_ls: instrument column " + std::to_string(j) + " has zero variance");
    }
  }
  const Matrix& X = data.col("x");
  Matrix Xhat(X.rows(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const WeightedLinear stage1 = fit_weighted(Z, X.col(j), w, lambda);
    Xhat.col(j) = (Z * stage1.coef).array() + stage1.intercept;
  }
  Matrix design(X.rows(), X.cols() + (observables.empty() ? 0 : data.dim("o")));
  design.leftCols(X.cols()) = Xhat;
  if (!observables.empty()) design.rightCols(data.dim("o")) = data.col("o");
  const WeightedLinear stage2 = fit_weighted(design, y, w, lambda);
  p.coef = stage2.coef;
  p.intercept = stage2.intercept;
  return p;
}

Vector baseline_predict(const LinearPredictor& p, const Dataset& data) {
  const Matrix X = hstack(data, p.inputs);
  if (X.cols() != p.coef.size()) throw DimensionError("baseline_predict: input width does not match the fitted predictor");
  return (X * p.coef).array() + p.intercept;
}

}  // namespace speccausal
