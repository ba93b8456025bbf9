#include "speccausal/saddle.hpp"

#include "speccausal/checkpoint.hpp"

#include <cmath>

namespace speccausal {

RegularizerKind parse_regularizer(const std::string& s) {
  if (s == "param_l2") return RegularizerKind::param_l2;
  if (s == "function_l2") return RegularizerKind::function_l2;
  throw ConfigError("unknown regularizer '" + s + "' (expected param_l2 or function_l2)");
}

std::string to_string(RegularizerKind k) { return k == RegularizerKind::param_l2 ? "param_l2" : "function_l2"; }

SolveMethod parse_method(const std::string& s) {
  if (s == "closed_form") return SolveMethod::closed_form;
  if (s == "gda") return SolveMethod::gda;
  throw ConfigError("unknown solver method '" + s + "' (expected closed_form or gda)");
}

std::string to_string(SolveMethod m) { return m == SolveMethod::closed_form ? "closed_form" : "gda"; }

namespace {

Vector apply_R(const QuadraticSaddle& q, const Vector& g) { return q.R ? Vector(*q.R * g) : g; }

}  // namespace

double QuadraticSaddle::objective(const Vector& g, const Vector& w) const {
  return w.dot(b - A * g) - 0.5 * w.dot(M * w) + 0.5 * lambda * g.dot(apply_R(*this, g));
}

Vector QuadraticSaddle::primal_gradient(const Vector& g, const Vector& w) const {
  return lambda * apply_R(*this, g) - A.transpose() * w;
}

Vector QuadraticSaddle::dual_gradient(const Vector& g, const Vector& w) const {
  return b - A * g - M * w;
}

namespace {

void add_jitter(Matrix& M, double jitter) {
  if (jitter <= 0 || M.rows() == 0) return;
  const double eps = jitter * M.trace() / static_cast<double>(M.rows());
  M.diagonal().array() += eps > 0 ? eps : jitter;
}

void check_reg(const RegularizerSpec& reg) {
  if (!(reg.lambda >= 0) || !std::isfinite(reg.lambda)) throw ConfigError("regularizer lambda must be >= 0");
}

// Cholesky of the dual second moment, or an error when it is not positive definite.
Eigen::LLT<Eigen::MatrixXd> dual_factor(const Matrix& M) {
  Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(M)};
  if (llt.info() != Eigen::Success) {
    throw NumericError("dual second-moment matrix is singular; enable jitter or use richer instrument features");
  }
  const Eigen::MatrixXd L = llt.matrixL();
  const double mx = L.diagonal().maxCoeff();
  if (L.diagonal().minCoeff() <= 1e-12 * mx) {
    throw NumericError("dual second-moment matrix is numerically singular; enable jitter");
  }
  return llt;
}

void fill_diagnostics(const QuadraticSaddle& q, SaddleSolution& s) {
  auto& d = s.diagnostics;
  d.primal_residual = q.primal_gradient(s.primal, s.dual).cwiseAbs().maxCoeff();
  d.dual_residual = q.dual_gradient(s.primal, s.dual).cwiseAbs().maxCoeff();
  d.objective = q.objective(s.primal, s.dual);
  d.gap = std::max(d.primal_residual, d.dual_residual);
  if (q.lambda <= 0) return;
  const Eigen::LLT<Eigen::MatrixXd> m(Eigen::MatrixXd(q.M));
  const Vector r = q.b - q.A * s.primal;
  const double primal_value = 0.5 * r.dot(m.solve(r)) + 0.5 * q.lambda * s.primal.dot(apply_R(q, s.primal));
  const Vector atw = q.A.transpose() * s.dual;
  double conj;
  if (q.R) {
    const Eigen::LDLT<Eigen::MatrixXd> rl(Eigen::MatrixXd(*q.R));
    if (rl.info() != Eigen::Success || (rl.vectorD().array() <= 1e-12 * rl.vectorD().cwiseAbs().maxCoeff()).any()) return;
    conj = atw.dot(rl.solve(atw));
  } else {
    conj = atw.squaredNorm();
  }
  const double dual_value = s.dual.dot(q.b) - 0.5 * s.dual.dot(q.M * s.dual) - 0.5 * conj / q.lambda;
  d.gap = std::max(0.0, primal_value - dual_value);
}

}  // namespace

QuadraticSaddle build_saddle(const Matrix& kappa, const Matrix& chi, const Vector& y, const Vector& weights,
                             const RegularizerSpec& reg, const SaddleOptions& opt) {
  check_reg(reg);
  const Eigen::Index n = kappa.rows();
  if (chi.rows() != n || y.size() != n || weights.size() != n) throw DimensionError("build_saddle: row counts differ");
  if (n == 0) throw DimensionError("build_saddle: no rows");
  require_finite(kappa, "primal features");
  require_finite(chi, "dual features");
  require_finite(y, "outcome");
  const Vector w = weights / weights.sum();
  QuadraticSaddle q;
  const Matrix wchi = (chi.array().colwise() * w.array()).matrix();
  q.A = wchi.transpose() * kappa;
  q.b = wchi.transpose() * y;
  q.M = wchi.transpose() * chi;
  add_jitter(q.M, opt.jitter);
  if (reg.kind == RegularizerKind::function_l2) {
    q.R = Matrix(kappa.transpose() * (kappa.array().colwise() * w.array()).matrix());
  }
  q.lambda = reg.lambda;
  return q;
}

SaddleSolution solve_closed_form(const QuadraticSaddle& q) {
  const auto llt = dual_factor(q.M);
  SaddleSolution s;
  s.diagnostics.method = "closed_form";
  if (q.lambda > 0 && !q.R) {
    // (A^T M^-1 A + lambda I)^-1 A^T M^-1 b = A^T (A A^T + lambda M)^-1 b
    Matrix K = q.A * q.A.transpose() + q.lambda * q.M;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt{Eigen::MatrixXd(K)};
    Vector t = ldlt.solve(q.b);
    t += ldlt.solve(q.b - K * t);
    s.primal = q.A.transpose() * t;
  } else if (q.lambda > 0) {
    const Eigen::MatrixXd MiA = llt.solve(Eigen::MatrixXd(q.A));
    Eigen::MatrixXd H = q.A.transpose() * MiA + q.lambda * *q.R;
    const Vector rhs = MiA.transpose() * q.b;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    const double scale = H.diagonal().cwiseAbs().maxCoeff();
    if (ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 1e-13 * scale).all()) {
      s.primal = ldlt.solve(rhs);
      s.primal += ldlt.solve(rhs - H * s.primal);
    } else {
      // R is rank deficient on this sample. A vanishing ridge picks (nearly) the minimum-norm
      // minimizer at the cost of one more factorization instead of an SVD.
      H.diagonal().array() += 1e-10 * scale;
      const Eigen::LDLT<Eigen::MatrixXd> reg_ldlt(H);
      s.primal = reg_ldlt.solve(rhs);
    }
  } else {
    // lambda = 0: minimum-norm minimizer of |M^{-1/2}(b - A g)|
    const Eigen::MatrixXd At = llt.matrixL().solve(Eigen::MatrixXd(q.A));
    const Vector bt = llt.matrixL().solve(Eigen::VectorXd(q.b));
    s.primal = pseudo_inverse(At, 1e-12) * bt;
  }
  s.dual = llt.solve(Eigen::VectorXd(q.b - q.A * s.primal));
  fill_diagnostics(q, s);
  return s;
}

namespace {

// J = [[lambda R, -A^T], [A, M]]; returns an estimate of |J|_2 by power iteration on J^T J.
double operator_norm(const QuadraticSaddle& q) {
  const Eigen::Index p = q.primal_dim(), m = q.dual_dim();
  Vector x = Vector::Ones(p + m) / std::sqrt(static_cast<double>(p + m));
  double est = 0;
  for (int it = 0; it < 200; ++it) {
    const Vector g = x.head(p), w = x.tail(m);
    Vector jx(p + m);
    jx.head(p) = q.lambda * apply_R(q, g) - q.A.transpose() * w;
    jx.tail(m) = q.A * g + q.M * w;
    Vector jtjx(p + m);
    jtjx.head(p) = q.lambda * (q.R ? Vector(q.R->transpose() * jx.head(p)) : Vector(jx.head(p))) + q.A.transpose() * jx.tail(m);
    jtjx.tail(m) = -q.A * jx.head(p) + q.M.transpose() * jx.tail(m);
    const double nrm = jtjx.norm();
    if (nrm == 0) break;
    const double next = std::sqrt(nrm);
    x = jtjx / nrm;
    if (std::abs(next - est) <= 1e-6 * next) {
      est = next;
      break;
    }
    est = next;
  }
  return est;
}

}  // namespace

SaddleSolution solve_extragradient(const QuadraticSaddle& q, const SaddleOptions& opt) {
  const Eigen::Index p = q.primal_dim(), m = q.dual_dim();
  const double L = operator_norm(q) * 1.05;
  SaddleSolution s;
  s.diagnostics.method = "gda";
  s.primal = Vector::Zero(p);
  s.dual = Vector::Zero(m);
  s.averaged_primal = Vector::Zero(p);
  if (!(L > 0)) {
    fill_diagnostics(q, s);
    return s;
  }
  const double eta = opt.step_fraction / L;
  const double threshold = opt.tol * std::max(1.0, q.b.cwiseAbs().maxCoeff());
  Vector g = s.primal, w = s.dual;
  int it = 0;
  bool converged = false;
  for (; it < opt.max_iters; ++it) {
    // operator F = (dL/dg, -dL/dw)
    const Vector fg = q.primal_gradient(g, w);
    const Vector fw = -q.dual_gradient(g, w);
    if (std::max(fg.cwiseAbs().maxCoeff(), fw.cwiseAbs().maxCoeff()) <= threshold) {
      converged = true;
      break;
    }
    const Vector gh = g - eta * fg;
    const Vector wh = w - eta * fw;
    g -= eta * q.primal_gradient(gh, wh);
    w += eta * q.dual_gradient(gh, wh);
    s.averaged_primal += (g - s.averaged_primal) / static_cast<double>(it + 1);
    if (!g.allFinite() || !w.allFinite()) throw NumericError("extragradient diverged");
  }
  s.primal = g;
  s.dual = w;
  s.diagnostics.iterations = it;
  fill_diagnostics(q, s);
  if (!converged) {
    throw ConvergenceError("extragradient did not converge in " + std::to_string(opt.max_iters) +
                               " iterations (gap " + std::to_string(s.diagnostics.gap) + ")",
                           s);
  }
  return s;
}

SaddleSolution solve_saddle(const QuadraticSaddle& q, SolveMethod method, const SaddleOptions& opt) {
  return method == SolveMethod::closed_form ? solve_closed_form(q) : solve_extragradient(q, opt);
}

IVSolution solve_iv_saddle(const IVRepresentation& rep, const Dataset& data, const RegularizerSpec& reg,
                           SolveMethod method, const SaddleOptions& opt) {
  rep.validate();
  data.validate();
  if (data.setting != Setting::iv) throw DimensionError("solve_iv_saddle: dataset setting is " + to_string(data.setting));
  if (data.dim("y") != 1) throw DimensionError("solve_iv_saddle: outcome must be scalar");
  const Matrix phi = evaluate(rep.phi, data.col("x"));
  const Matrix psi = evaluate(rep.psi, data.col("z"));
  const QuadraticSaddle q = build_saddle(phi, psi, data.col("y").col(0), data.normalized_weights(), reg, opt);
  const SaddleSolution s = solve_saddle(q, method, opt);
  return {s.primal, s.dual, reg, s.diagnostics};
}

Matrix conditional_primal_features(const ConditionalRepresentation& rep, const Matrix& phi, const Matrix& xi) {
  const Eigen::Index n = phi.rows(), dt = rep.d_target(), dy = rep.d_outcome();
  if (xi.rows() != n) throw DimensionError("conditional_primal_features: row counts differ");
  Matrix K(n, dy * dt * dt);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Matrix Q = rep.Q(xi.row(i).transpose());  // dt x dy
    for (Eigen::Index c = 0; c < dy; ++c) {
      for (Eigen::Index a = 0; a < dt; ++a) {
        K.row(i).segment(c * dt * dt + a * dt, dt) = Q(a, c) * phi.row(i);
      }
    }
  }
  return K;
}

Matrix conditional_dual_features(const ConditionalRepresentation& rep, const Matrix& psi, const Matrix& xi) {
  const Eigen::Index n = psi.rows();
  if (xi.rows() != n) throw DimensionError("conditional_dual_features: row counts differ");
  Matrix chi(n, rep.d_outcome());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector c = xi.row(i).transpose();
    chi.row(i) = (rep.Q(c).transpose() * (rep.V(c) * psi.row(i).transpose())).transpose();
  }
  return chi;
}

namespace {

ConditionalSolution solve_conditional(const ConditionalRepresentation& rep, const Dataset& data, const RegularizerSpec& reg,
                                      SolveMethod method, const SaddleOptions& opt) {
  rep.validate();
  data.validate();
  if (data.setting != rep.setting) {
    throw DimensionError("dataset setting " + to_string(data.setting) + " does not match representation setting " +
                         to_string(rep.setting));
  }
  if (data.dim("y") != 1) throw DimensionError("outcome must be scalar");
  check_reg(reg);
  const Matrix phi = evaluate(rep.phi, data.col(rep.target_column()));
  const Matrix psi = evaluate(rep.psi, data.col("z"));
  const Matrix xi = evaluate(rep.xi, data.col(rep.conditioner_column()));
  const Vector y = data.col("y").col(0);
  const Vector w = data.normalized_weights();
  const Matrix chi = conditional_dual_features(rep, psi, xi);

  // accumulate moments chunk by chunk so the n x p feature matrix is never held at once
  const Eigen::Index n = data.rows();
  const Eigen::Index p = static_cast<Eigen::Index>(rep.d_outcome()) * rep.d_target() * rep.d_target();
  QuadraticSaddle q;
  q.lambda = reg.lambda;
  q.A = Matrix::Zero(chi.cols(), p);
  if (reg.kind == RegularizerKind::function_l2) q.R = Matrix::Zero(p, p);
  const auto chunk = static_cast<Eigen::Index>(std::max<std::size_t>(opt.chunk_rows, 1));
  for (Eigen::Index s = 0; s < n; s += chunk) {
    const Eigen::Index len = std::min(chunk, n - s);
    const Matrix K = conditional_primal_features(rep, phi.middleRows(s, len), xi.middleRows(s, len));
    const Matrix wchi = (chi.middleRows(s, len).array().colwise() * w.segment(s, len).array()).matrix();
    q.A.noalias() += wchi.transpose() * K;
    if (q.R) {
      const Matrix Ks = (K.array().colwise() * w.segment(s, len).array().sqrt()).matrix();
      q.R->selfadjointView<Eigen::Lower>().rankUpdate(Ks.transpose());
    }
  }
  if (q.R) *q.R = q.R->selfadjointView<Eigen::Lower>();
  const Matrix wchi = (chi.array().colwise() * w.array()).matrix();
  q.b = wchi.transpose() * y;
  q.M = wchi.transpose() * chi;
  add_jitter(q.M, opt.jitter);
  const SaddleSolution s = solve_saddle(q, method, opt);
  ConditionalSolution out;
  out.setting = rep.setting;
  out.G = unvec_rowmajor(s.primal, rep.d_outcome(), rep.d_target() * rep.d_target());
  out.w = s.dual;
  out.reg = reg;
  out.diagnostics = s.diagnostics;
  return out;
}

}  // namespace

ConditionalSolution solve_ivoc_saddle(const ConditionalRepresentation& rep, const Dataset& data, const RegularizerSpec& reg,
                                      SolveMethod method, const SaddleOptions& opt) {
  if (rep.setting != Setting::ivoc) throw DimensionError("solve_ivoc_saddle: representation setting is " + to_string(rep.setting));
  return solve_conditional(rep, data, reg, method, opt);
}

ConditionalSolution solve_pcl_saddle(const ConditionalRepresentation& rep, const Dataset& data, const RegularizerSpec& reg,
                                     SolveMethod method, const SaddleOptions& opt) {
  if (rep.setting != Setting::pcl) throw DimensionError("solve_pcl_saddle: representation setting is " + to_string(rep.setting));
  return solve_conditional(rep, data, reg, method, opt);
}

Vector predict_structural(const IVSolution& sol, const IVRepresentation& rep, const Matrix& x) {
  rep.validate();
  if (sol.u.size() != rep.dim()) throw DimensionError("predict_structural: solution and representation dims differ");
  return evaluate(rep.phi, x) * sol.u;
}

Vector predict_structural(const ConditionalSolution& sol, const ConditionalRepresentation& rep, const Matrix& target,
                          const Matrix& conditioner) {
  rep.validate();
  if (sol.setting != rep.setting) {
    throw DimensionError("predict_structural: solution is for " + to_string(sol.setting) + ", representation for " +
                         to_string(rep.setting));
  }
  const Eigen::Index dt = rep.d_target(), dy = rep.d_outcome();
  if (sol.G.rows() != dy || sol.G.cols() != dt * dt) throw DimensionError("predict_structural: G has the wrong shape");
  if (target.rows() != conditioner.rows()) throw DimensionError("predict_structural: input row counts differ");
  const Matrix phi = evaluate(rep.phi, target);
  const Matrix xi = evaluate(rep.xi, conditioner);
  std::vector<Matrix> blocks;
  for (Eigen::Index c = 0; c < dy; ++c) blocks.push_back(unvec_rowmajor(sol.G.row(c).transpose(), dt, dt));
  Vector out(target.rows());
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    const Matrix Qt = rep.Q(xi.row(i).transpose()).transpose();  // dy x dt
    const Matrix phi_row = phi.row(i);
    double f = 0;
    for (Eigen::Index c = 0; c < dy; ++c) f += kron_apply(Qt.row(c), phi_row, blocks[static_cast<std::size_t>(c)])(0, 0);
    out(i) = f;
  }
  return out;
}

Vector predict_structural(const ConditionalSolution& sol, const ConditionalRepresentation& rep, const Dataset& inputs) {
  return predict_structural(sol, rep, inputs.col(rep.target_column()), inputs.col(rep.conditioner_column()));
}

double pcl_causal_effect(const ConditionalSolution& sol, const ConditionalRepresentation& rep, const Vector& x,
                         const Matrix& w_samples) {
  if (w_samples.rows() == 0) throw DimensionError("pcl_causal_effect: no outcome-proxy samples");
  if (rep.setting != Setting::pcl) throw DimensionError("pcl_causal_effect: representation is not for PCL");
  const Matrix xs = x.transpose().replicate(w_samples.rows(), 1);
  return predict_structural(sol, rep, w_samples, xs).mean();
}

Matrix reparametrize(const Matrix& B, const Vector& beta) {
  if (B.rows() != B.cols()) throw DimensionError("reparametrize: B must be square");
  Vector vecB(B.size());
  for (Eigen::Index a = 0; a < B.cols(); ++a) vecB.segment(a * B.rows(), B.rows()) = B.col(a);
  return beta * vecB.transpose();
}

namespace {

void put_diagnostics(Checkpoint& ck, const SaddleDiagnostics& d, const RegularizerSpec& reg) {
  ck.put_scalar("solution.lambda", reg.lambda);
  ck.put_ints("solution.regularizer", {static_cast<std::int64_t>(reg.kind)});
  ck.put_ints("solution.method", {d.method == "gda" ? 1 : 0});
  ck.put_ints("solution.iterations", {d.iterations});
  Vector v(4);
  v << d.gap, d.primal_residual, d.dual_residual, d.objective;
  ck.put("solution.diagnostics", v);
}

void get_diagnostics(const Checkpoint& ck, SaddleDiagnostics& d, RegularizerSpec& reg) {
  reg.lambda = ck.scalar("solution.lambda");
  reg.kind = static_cast<RegularizerKind>(ck.ints("solution.regularizer").at(0));
  d.method = ck.ints("solution.method").at(0) == 1 ? "gda" : "closed_form";
  d.iterations = static_cast<int>(ck.ints("solution.iterations").at(0));
  const Vector v = ck.vector("solution.diagnostics");
  d.gap = v(0);
  d.primal_residual = v(1);
  d.dual_residual = v(2);
  d.objective = v(3);
}

}  // namespace

void save_solution(const IVSolution& sol, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.put_ints("solution.setting", {static_cast<std::int64_t>(Setting::iv)});
  ck.put("u", sol.u);
  ck.put("v", sol.v);
  put_diagnostics(ck, sol.diagnostics, sol.reg);
  ck.save(path);
}

void save_solution(const ConditionalSolution& sol, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.put_ints("solution.setting", {static_cast<std::int64_t>(sol.setting)});
  ck.put("G", sol.G);
  ck.put("w", sol.w);
  put_diagnostics(ck, sol.diagnostics, sol.reg);
  ck.save(path);
}

IVSolution load_iv_solution(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (ck.ints("solution.setting").at(0) != static_cast<std::int64_t>(Setting::iv)) throw Error(path.string() + " is not an IV solution");
  IVSolution s;
  s.u = ck.vector("u");
  s.v = ck.vector("v");
  get_diagnostics(ck, s.diagnostics, s.reg);
  return s;
}

ConditionalSolution load_conditional_solution(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  const auto setting = ck.ints("solution.setting").at(0);
  if (setting == static_cast<std::int64_t>(Setting::iv)) throw Error(path.string() + " is an IV solution");
  ConditionalSolution s;
  s.setting = static_cast<Setting>(setting);
  s.G = ck.matrix("G");
  s.w = ck.vector("w");
  get_diagnostics(ck, s.diagnostics, s.reg);
  return s;
}

}  // namespace speccausal
