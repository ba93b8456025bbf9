#pragma once

#include "speccausal/discrete.hpp"
#include "speccausal/spectral_rep.hpp"

namespace speccausal {

// Single linear layer mapping a one-hot level to the matching row of `table` (levels x d).
FeatureNetwork lookup_network(const Matrix& table);

// ReLU network sending each scalar level to the matching row of `table`, via hat functions
// that are exact at the levels themselves.
FeatureNetwork level_network(const std::vector<double>& levels, const Matrix& table);

// Network emitting table rows for a discrete variable, whichever encoding its support uses.
FeatureNetwork variable_network(const DiscreteVariable& var, const Matrix& table);

// phi(x) = x, psi(z) = z.
IVRepresentation identity_iv_representation(int dim);

// Rank-truncated SVD of the ratio table r(x, z) = p(x, z) / (p(x) p(z)):
// r = phi psi^T with phi = U sqrt(S), psi = V sqrt(S).
struct ExactIVFactorization {
  Matrix phi;  // |X| x d
  Matrix psi;  // |Z| x d
  Vector px;
  Vector pz;
};
ExactIVFactorization exact_iv_factorization(const DiscreteJointSpec& spec, double tol = 1e-12);
IVRepresentation exact_iv_representation(const DiscreteJointSpec& spec);

// sum_x p(x) phi(x) f(x): E[f(X) | Z = z] = <psi(z), v_f> under an exact factorization.
Vector linearization_vector(const Matrix& phi, const Vector& px, const Vector& f);

// One-hot features with V(c)[t, z] = p(t|z,c)/p(t), W(c)[y, z] = p(y|z,c)/p(y) and
// Q(c) = (V(c)^T)^+ W(c)^T. Throws when W(c) is not reproduced by Q(c)^T V(c).
ConditionalRepresentation exact_conditional_representation(const DiscreteJointSpec& spec);

}  // namespace speccausal
