#pragma once

#include "speccausal/dataset.hpp"
#include "speccausal/error.hpp"
#include "speccausal/spectral_rep.hpp"

#include <optional>
#include <string>

namespace speccausal {

enum class RegularizerKind { param_l2, function_l2 };
RegularizerKind parse_regularizer(const std::string& s);
std::string to_string(RegularizerKind k);

struct RegularizerSpec {
  RegularizerKind kind = RegularizerKind::param_l2;
  double lambda = 1e-3;
};

enum class SolveMethod { closed_form, gda };
SolveMethod parse_method(const std::string& s);
std::string to_string(SolveMethod m);

struct SaddleOptions {
  // Added to the dual second-moment matrix as jitter * trace(M) / dim.
  double jitter = 1e-8;
  int max_iters = 200000;
  // First-order residual threshold, relative to max(1, |b|_inf).
  double tol = 1e-8;
  double step_fraction = 0.5;  // step = step_fraction / |J|_2
  std::size_t chunk_rows = 512;
};

struct SaddleDiagnostics {
  std::string method;
  int iterations = 0;
  double gap = 0.0;  // duality gap when lambda > 0 and R is invertible, first-order residual otherwise
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double objective = 0.0;
};

// L(g, w) = w^T (b - A g) - 1/2 w^T M w + lambda/2 g^T R g
// A = E[chi kappa^T], b = E[chi y], M = E[chi chi^T], R = I or E[kappa kappa^T].
struct QuadraticSaddle {
  Matrix A;
  Vector b;
  Matrix M;
  std::optional<Matrix> R;  // identity when empty
  double lambda = 0.0;

  Eigen::Index primal_dim() const { return A.cols(); }
  Eigen::Index dual_dim() const { return A.rows(); }
  double objective(const Vector& g, const Vector& w) const;
  Vector primal_gradient(const Vector& g, const Vector& w) const;
  Vector dual_gradient(const Vector& g, const Vector& w) const;
};

struct SaddleSolution {
  Vector primal;
  Vector dual;
  Vector averaged_primal;  // extragradient only: running mean of the iterates
  SaddleDiagnostics diagnostics;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, SaddleSolution last) : Error(what), last_(std::move(last)) {}
  const SaddleSolution& last_iterate() const { return last_; }
  double gap() const { return last_.diagnostics.gap; }

 private:
  SaddleSolution last_;
};

// Moments from per-row primal features kappa (n x p), dual features chi (n x q), outcome y and weights.
QuadraticSaddle build_saddle(const Matrix& kappa, const Matrix& chi, const Vector& y, const Vector& weights,
                             const RegularizerSpec& reg, const SaddleOptions& opt = {});

SaddleSolution solve_closed_form(const QuadraticSaddle& q);
SaddleSolution solve_extragradient(const QuadraticSaddle& q, const SaddleOptions& opt = {});
SaddleSolution solve_saddle(const QuadraticSaddle& q, SolveMethod method, const SaddleOptions& opt = {});

struct IVSolution {
  Vector u;
  Vector v;
  RegularizerSpec reg;
  SaddleDiagnostics diagnostics;
};

struct ConditionalSolution {
  Setting setting = Setting::ivoc;
  Matrix G;  // d_y x d_t^2
  Vector w;  // d_y
  RegularizerSpec reg;
  SaddleDiagnostics diagnostics;
};

using IVOCSolution = ConditionalSolution;
using PCLSolution = ConditionalSolution;

IVSolution solve_iv_saddle(const IVRepresentation& rep, const Dataset& data, const RegularizerSpec& reg,
                           SolveMethod method, const SaddleOptions& opt = {});
ConditionalSolution solve_ivoc_saddle(const ConditionalRepresentation& rep, const Dataset& data,
                                      const RegularizerSpec& reg, SolveMethod method, const SaddleOptions& opt = {});
ConditionalSolution solve_pcl_saddle(const ConditionalRepresentation& rep, const Dataset& data,
                                     const RegularizerSpec& reg, SolveMethod method, const SaddleOptions& opt = {});

// Row-major vectorization of Q(c)^T kron phi(t)^T for every row: n x (d_y * d_t^2).
Matrix conditional_primal_features(const ConditionalRepresentation& rep, const Matrix& phi, const Matrix& xi);
// Rows Q(c)^T V(c) psi(z): n x d_y.
Matrix conditional_dual_features(const ConditionalRepresentation& rep, const Matrix& psi, const Matrix& xi);

// f(x) = <phi(x), u>
Vector predict_structural(const IVSolution& sol, const IVRepresentation& rep, const Matrix& x);
// f(t, c) = <G, Q(c)^T kron phi(t)^T>_F, evaluated with kron_apply one outcome row at a time.
Vector predict_structural(const ConditionalSolution& sol, const ConditionalRepresentation& rep, const Matrix& target,
                          const Matrix& conditioner);
// Dispatch on the dataset columns of the solution's setting.
Vector predict_structural(const ConditionalSolution& sol, const ConditionalRepresentation& rep, const Dataset& inputs);

// Mean of f(x, w) over the supplied outcome-proxy samples.
double pcl_causal_effect(const ConditionalSolution& sol, const ConditionalRepresentation& rep, const Vector& x,
                         const Matrix& w_samples);

// G = beta vec(B)^T with vec stacking columns, so that phi^T B Q beta = <G, Q^T kron phi^T>_F.
Matrix reparametrize(const Matrix& B, const Vector& beta);

void save_solution(const IVSolution& sol, const std::filesystem::path& path);
void save_solution(const ConditionalSolution& sol, const std::filesystem::path& path);
IVSolution load_iv_solution(const std::filesystem::path& path);
ConditionalSolution load_conditional_solution(const std::filesystem::path& path);

// Reference estimators.
enum class BaselineKind { direct_ridge, two_stage_ls };
BaselineKind parse_baseline(const std::string& s);
std::string to_string(BaselineKind k);

struct LinearPredictor {
  std::vector<std::string> inputs;  // columns concatenated in this order
  Vector coef;
  double intercept = 0.0;
};

// direct_ridge: y on (treatment, observables). two_stage_ls: treatment on (instrument, observables),
// then y on (fitted treatment, observables). Both minimize mean squared error + lambda |coef|^2
// over centered designs with a free intercept.
LinearPredictor baseline_fit(BaselineKind kind, const Dataset& data, double lambda);
Vector baseline_predict(const LinearPredictor& p, const Dataset& data);

}  // namespace speccausal
