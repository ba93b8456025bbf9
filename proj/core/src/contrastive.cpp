#include "speccausal/contrastive.hpp"

#include "speccausal/error.hpp"

#include <cmath>

namespace speccausal {

namespace {

void require_square(const Matrix& s, const char* who) {
  if (s.rows() != s.cols()) throw DimensionError(std::string(who) + ": score matrix must be square");
  if (s.rows() < 2) throw DimensionError(std::string(who) + ": needs n >= 2 (off-diagonal term is undefined)");
  require_finite(s, who);
}

}  // namespace

LossResult contrastive_l2_loss(const Matrix& s) {
  require_square(s, "contrastive_l2_loss");
  const double n = static_cast<double>(s.rows());
  const double off_norm = 1.0 / (n * (n - 1.0));
  const double diag = s.diagonal().sum();
  const double off_sq = s.squaredNorm() - s.diagonal().squaredNorm();
  LossResult r;
  r.value = -(2.0 / n * diag - off_norm * off_sq - 1.0);
  r.grad = 2.0 * off_norm * s;
  r.grad.diagonal().setConstant(-2.0 / n);
  return r;
}

LossResult contrastive_mle_loss(const Matrix& s) {
  require_square(s, "contrastive_mle_loss");
  const Eigen::Index n = s.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!(s(i, j) > 0)) {
        throw NumericError("contrastive_mle_loss: score (" + std::to_string(i) + ", " + std::to_string(j) +
                           ") = " + std::to_string(s(i, j)) + " is not positive");
      }
    }
  }
  const double nn = static_cast<double>(n);
  LossResult r;
  r.grad.resize(n, n);
  double value = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double row_off = s.row(i).sum() - s(i, i);
    value += -std::log(s(i, i)) + std::log(row_off);
    for (Eigen::Index j = 0; j < n; ++j) r.grad(i, j) = 1.0 / (nn * row_off);
    r.grad(i, i) = -1.0 / (nn * s(i, i));
  }
  r.value = value / nn;
  return r;
}

Matrix softplus(const Matrix& s) {
  // log1p(exp(-|s|)) + max(s, 0) stays finite for large |s|
  return (s.array().abs().operator-().exp().log1p() + s.array().max(0.0)).matrix();
}

Matrix sigmoid(const Matrix& s) {
  return (1.0 / (1.0 + (-s.array()).exp())).matrix();
}

ContrastiveLoss parse_loss(const std::string& name) {
  if (name == "l2") return ContrastiveLoss::l2;
  if (name == "mle") return ContrastiveLoss::mle;
  throw ConfigError("unknown contrastive loss '" + name + "' (expected l2 or mle)");
}

std::string to_string(ContrastiveLoss l) { return l == ContrastiveLoss::l2 ? "l2" : "mle"; }

LossResult contrastive_loss(ContrastiveLoss kind, const Matrix& raw) {
  if (kind == ContrastiveLoss::l2) return contrastive_l2_loss(raw);
  LossResult r = contrastive_mle_loss(softplus(raw));
  r.grad = (r.grad.array() * sigmoid(raw).array()).matrix();
  return r;
}

}  // namespace speccausal
