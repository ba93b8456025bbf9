#include "speccausal/linalg.hpp"

#include "speccausal/error.hpp"

#include <cmath>
#include <sstream>

namespace speccausal {

namespace {

std::string shape(const Matrix& M) {
  std::ostringstream os;
  os << M.rows() << "x" << M.cols();
  return os.str();
}

}  // namespace

Matrix kron_apply(const Matrix& C, const Matrix& D, const Matrix& G) {
  if (C.cols() != G.rows()) {
    throw DimensionError("kron_apply: C (" + shape(C) + ") and G (" + shape(G) +
                         ") mismatch: C.cols must equal G.rows");
  }
  if (D.cols() != G.cols()) {
    throw DimensionError("kron_apply: D (" + shape(D) + ") and G (" + shape(G) +
                         ") mismatch: D.cols must equal G.cols");
  }
  return C * G * D.transpose();
}

Matrix kronecker(const Matrix& A, const Matrix& B) {
  Matrix K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    }
  }
  return K;
}

Matrix pseudo_inverse(const Matrix& M, double tol) {
  if (!(tol > 0)) throw NumericError("pseudo_inverse: tol must be positive");
  require_finite(M, "pseudo_inverse input");
  if (M.size() == 0) return Matrix(M.cols(), M.rows());
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(M), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double cutoff = tol * (s.size() > 0 ? s(0) : 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff && s(i) > 0) inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Vector solve_regularized(const Matrix& H, const Vector& rhs, double lambda) {
  if (H.rows() != H.cols() || H.rows() != rhs.size()) {
    throw DimensionError("solve_regularized: system " + shape(H) + " vs rhs of size " +
                         std::to_string(rhs.size()));
  }
  Eigen::MatrixXd K = H;
  K.diagonal().array() += lambda;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(K);
  const double scale = std::max(K.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  const Eigen::VectorXd d = ldlt.vectorD();
  bool singular = ldlt.info() != Eigen::Success;
  for (Eigen::Index i = 0; i < d.size() && !singular; ++i) {
    if (std::abs(d(i)) <= 1e-13 * scale) singular = true;
  }
  if (singular) {
    throw NumericError(lambda == 0.0
                           ? "singular system: use a positive lambda"
                           : "singular system even with lambda = " + std::to_string(lambda));
  }
  Eigen::VectorXd x = ldlt.solve(rhs);
  // one step of iterative refinement
  x += ldlt.solve(rhs - K * x);
  return x;
}

Vector ridge_regression(const Matrix& A, const Vector& b, double lambda) {
  if (A.rows() != b.size()) {
    throw DimensionError("ridge_regression: A (" + shape(A) + ") and b (size " +
                         std::to_string(b.size()) + ") mismatch");
  }
  if (lambda < 0) throw NumericError("ridge_regression: lambda must be >= 0");
  require_finite(A, "ridge_regression design");
  require_finite(b, "ridge_regression target");
  const Matrix H = A.transpose() * A;
  const Vector rhs = A.transpose() * b;
  return solve_regularized(H, rhs, lambda);
}

Vector vec_rowmajor(const Matrix& G) {
  return Eigen::Map<const Vector>(G.data(), G.size());
}

Matrix unvec_rowmajor(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) {
    throw DimensionError("unvec_rowmajor: size " + std::to_string(v.size()) + " != " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

bool all_finite(const Matrix& M) { return M.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

void require_finite(const Matrix& M, const std::string& what) {
  if (!M.allFinite()) throw NumericError(what + " contains non-finite entries");
}

void require_finite(const Vector& v, const std::string& what) {
  if (!v.allFinite()) throw NumericError(what + " contains non-finite entries");
}

Matrix cross_moment(const Matrix& X, const Matrix& Y) {
  if (X.rows() != Y.rows()) {
    throw DimensionError("cross_moment: row counts differ (" + shape(X) + " vs " + shape(Y) + ")");
  }
  if (X.rows() == 0) throw DimensionError("cross_moment: no rows");
  return X.transpose() * Y / static_cast<double>(X.rows());
}

}  // namespace speccausal
