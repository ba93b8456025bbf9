#pragma once

#include <Eigen/Dense>

#include <string>

namespace speccausal {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// C * G * D^T, i.e. (C kron D) applied to the row-major vectorization of G.
Matrix kron_apply(const Matrix& C, const Matrix& D, const Matrix& G);

// Explicit Kronecker product. Only for tests and small oracles.
Matrix kronecker(const Matrix& A, const Matrix& B);

// Singular values below tol * sigma_max are treated as zero.
Matrix pseudo_inverse(const Matrix& M, double tol = 1e-10);

// argmin ||Ax - b||^2 + lambda ||x||^2
Vector ridge_regression(const Matrix& A, const Vector& b, double lambda);

// Solves (H + lambda I) x = rhs for symmetric positive semidefinite H.
Vector solve_regularized(const Matrix& H, const Vector& rhs, double lambda);

Vector vec_rowmajor(const Matrix& G);
Matrix unvec_rowmajor(const Vector& v, Eigen::Index rows, Eigen::Index cols);

bool all_finite(const Matrix& M);
bool all_finite(const Vector& v);

void require_finite(const Matrix& M, const std::string& what);
void require_finite(const Vector& v, const std::string& what);

// Second-moment helpers over row-sample matrices: (1/n) X^T Y.
Matrix cross_moment(const Matrix& X, const Matrix& Y);

}  // namespace speccausal
