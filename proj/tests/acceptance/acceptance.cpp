// Acceptance gate: one line per criterion, nonzero exit when any fails.
// Usage: acceptance [criterion numbers...]   (all when none given)

#include "speccausal/benchdata.hpp"
#include "speccausal/contrastive.hpp"
#include "speccausal/discrete.hpp"
#include "speccausal/error.hpp"
#include "speccausal/exact_representation.hpp"
#include "speccausal/experiment.hpp"
#include "speccausal/saddle.hpp"
#include "speccausal/spectral_rep.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef SPECCAUSAL_CONFIG_DIR
#define SPECCAUSAL_CONFIG_DIR "configs"
#endif

using namespace speccausal;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;
  std::function<Outcome()> run;
};

Matrix gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

Matrix one_hot_rows(Eigen::Index k) { return Matrix::Identity(k, k); }

// Least-squares slope of pred on a single column x.
double slope_of(const Matrix& x, const Vector& pred) {
  const Vector xc = x.col(0).array() - x.col(0).mean();
  const Vector pc = pred.array() - pred.mean();
  return xc.dot(pc) / xc.squaredNorm();
}

// 1: gradients of both contrastive losses through random networks
Outcome grad_checks() {
  Rng rng(101);
  double worst = 0.0;
  std::string where;
  const Activation acts[] = {Activation::relu, Activation::tanh, Activation::linear};
  for (ContrastiveLoss kind : {ContrastiveLoss::l2, ContrastiveLoss::mle}) {
    for (int trial = 0; trial < 15; ++trial) {
      const int layers = 1 + static_cast<int>(rng.below(3));
      std::vector<int> hidden;
      for (int l = 1; l < layers; ++l) hidden.push_back(1 + static_cast<int>(rng.below(16)));
      const int in = 1 + static_cast<int>(rng.below(16));
      const int out = 1 + static_cast<int>(rng.below(16));
      const bool bn = rng.below(2) == 1;
      const Activation hidden_act = acts[rng.below(3)], out_act = acts[rng.below(3)];
      NetworkSpec spec = NetworkSpec::mlp(in, hidden, out, hidden_act, out_act, bn);
      // zero biases put relu units exactly on the kink whenever an upstream row is all zero
      spec.bias_init = BiasInit::fan_in_uniform;
      FeatureNetwork net(spec, rng.next_u64());
      const Eigen::Index batch = 4 + static_cast<Eigen::Index>(rng.below(5));
      const Matrix x = gaussian(batch, in, rng);
      const Matrix partner = gaussian(batch, out, rng);
      const OutputLoss loss = [&](const Matrix& o) {
        const LossResult r = contrastive_loss(kind, o * partner.transpose());
        return std::pair<double, Matrix>{r.value, r.grad * partner};
      };
      const GradCheckReport rep = grad_check_report(net, x, loss);
      if (rep.max_relative_error > worst) {
        worst = rep.max_relative_error;
        where = to_string(kind) + " trial " + std::to_string(trial) + " " + rep.worst_parameter + ", layers " +
                std::to_string(layers) + ", " + to_string(hidden_act) + "/" + to_string(out_act) + (bn ? ", bn" : "");
      }
    }
  }
  return {worst < 1e-4, "max relative error " + fmt(worst) + " (" + where + "), limit 1e-4"};
}

// 2: <phi, B Q beta> = <G, Q^T kron phi^T>_F
Outcome kronecker_identity() {
  Rng rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto dx = static_cast<Eigen::Index>(1 + rng.below(6));
    const auto dy = static_cast<Eigen::Index>(1 + rng.below(6));
    const Vector phi = gaussian(dx, 1, rng).col(0);
    const Vector beta = gaussian(dy, 1, rng).col(0);
    const Matrix B = gaussian(dx, dx, rng), Q = gaussian(dx, dy, rng);
    double lhs = 0.0;  // explicit triple sum
    for (Eigen::Index i = 0; i < dx; ++i)
      for (Eigen::Index j = 0; j < dx; ++j)
        for (Eigen::Index k = 0; k < dy; ++k) lhs += phi(i) * B(i, j) * Q(j, k) * beta(k);
    const double rhs = reparametrize(B, beta).cwiseProduct(speccausal::kronecker(Q.transpose(), phi.transpose())).sum();
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return {worst < 1e-10, "max abs difference " + fmt(worst) + ", limit 1e-10"};
}

// 3: learned density ratio on the 8x8 cosine toy
Outcome cosine_toy(ContrastiveLoss loss) {
  const std::size_t k = 8;
  const DiscreteJointSpec spec = cosine_ratio_toy(k);
  const Dataset data = gen_discrete_toy(spec, 20000, 303);
  const auto net = [&](std::uint64_t seed) {
    return FeatureNetwork(NetworkSpec::mlp(8, {64}, 8, Activation::relu, Activation::linear, false), seed);
  };
  IVRepresentation rep{net(1), net(2)};
  RepTrainConfig tc;
  tc.loss = loss;
  tc.epochs = 100;
  tc.batch_size = 256;
  tc.seed = 3;
  train_representation(TrainStage::iv, rep, data, nullptr, tc);
  const Matrix r = density_ratio(rep, loss, one_hot_rows(8), one_hot_rows(8), data.col("z"));
  double mae = 0.0;
  for (std::size_t x = 0; x < k; ++x)
    for (std::size_t z = 0; z < k; ++z)
      mae += std::abs(r(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(z)) - discrete_ratio_oracle(spec, x, z));
  mae /= static_cast<double>(k * k);
  return {mae < 0.1, "mean absolute error " + fmt(mae) + ", limit 0.1"};
}

// 4: E[f(X) | z] = <psi(z), v_f> on random finite joints
Outcome linearization() {
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto kx = static_cast<Eigen::Index>(2 + rng.below(6)), kz = static_cast<Eigen::Index>(2 + rng.below(6));
    std::vector<double> table(static_cast<std::size_t>(kx * kz));
    for (double& p : table) p = 0.05 + rng.uniform();
    const DiscreteJointSpec spec =
        make_joint({one_hot_variable("x", static_cast<std::size_t>(kx)), one_hot_variable("z", static_cast<std::size_t>(kz))},
                   [&](const Assignment& a) { return table[a[0] * static_cast<std::size_t>(kz) + a[1]]; });
    const ExactIVFactorization fac = exact_iv_factorization(spec);
    for (int k = 0; k < 10; ++k) {
      const Vector f = gaussian(kx, 1, rng).col(0);
      const Vector v = linearization_vector(fac.phi, fac.px, f);
      for (Eigen::Index z = 0; z < kz; ++z) {
        double num = 0.0, den = 0.0;
        for (Eigen::Index x = 0; x < kx; ++x) {
          const double p = table[static_cast<std::size_t>(x * kz + z)];
          num += p * f(x);
          den += p;
        }
        worst = std::max(worst, std::abs(num / den - fac.psi.row(z).dot(v)));
      }
    }
  }
  return {worst < 1e-10, "max abs difference " + fmt(worst) + ", limit 1e-10"};
}

// 5: linear-Gaussian IV slopes
Outcome linear_gaussian() {
  const Dataset d = gen_linear_gaussian_iv(10000, 2.0, 1.0, 505);
  const double ridge = baseline_fit(BaselineKind::direct_ridge, d, 0.0).coef(0);
  const double tsls = baseline_fit(BaselineKind::two_stage_ls, d, 0.0).coef(0);

  std::vector<std::size_t> rep_rows, est_rows;
  for (std::size_t i = 0; i < 10000; ++i) (i % 2 == 0 ? rep_rows : est_rows).push_back(i);
  const Dataset rep_data = d.subset(rep_rows), est_data = d.subset(est_rows);
  const Matrix grid = Eigen::VectorXd::LinSpaced(41, -2.0, 2.0);

  const IVRepresentation exact = identity_iv_representation(1);
  const IVSolution exact_sol = solve_iv_saddle(exact, est_data, {RegularizerKind::param_l2, 1e-4}, SolveMethod::closed_form);
  const double exact_slope = slope_of(grid, predict_structural(exact_sol, exact, grid));

  const auto net = [](std::uint64_t seed) {
    return FeatureNetwork(NetworkSpec::mlp(1, {32, 32}, 4, Activation::relu, Activation::linear, false), seed);
  };
  IVRepresentation learned{net(51), net(52)};
  standardize_inputs(learned.phi, rep_data.col("x"));
  standardize_inputs(learned.psi, rep_data.col("z"));
  RepTrainConfig tc;
  tc.epochs = 60;
  tc.seed = 53;
  train_representation(TrainStage::iv, learned, rep_data, nullptr, tc);
  const IVSolution learned_sol = solve_iv_saddle(learned, est_data, {RegularizerKind::param_l2, 1e-4}, SolveMethod::closed_form);
  const double learned_slope = slope_of(grid, predict_structural(learned_sol, learned, grid));

  const bool ok = std::abs(ridge - 2.333) <= 0.05 && std::abs(tsls - 2.0) <= 0.1 &&
                  std::abs(exact_slope - 2.0) <= 0.1 && std::abs(learned_slope - 2.0) <= 0.1;
  return {ok, "direct_ridge " + fmt(ridge) + " (2.333 +- 0.05), two_stage_ls " + fmt(tsls) +
                  ", spectral exact " + fmt(exact_slope) + ", spectral learned d=4 " + fmt(learned_slope) +
                  " (2.0 +- 0.1)"};
}

// 6: extragradient reaches the closed-form primal on random well-conditioned IV fits
Outcome gda_vs_closed_form() {
  Rng rng(606);
  double worst = 0.0;
  int iterations = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = static_cast<Eigen::Index>(1 + rng.below(5));
    const Eigen::Index n = 2000;
    // z ~ N(0, I), x = z Gamma + confounder + noise, y = x beta + confounder
    const Matrix z = gaussian(n, d, rng);
    const Matrix gamma = Matrix::Identity(d, d) + 0.3 * gaussian(d, d, rng);
    const Vector e = gaussian(n, 1, rng).col(0);
    const Matrix x = z * gamma + e * Eigen::RowVectorXd::Constant(d, rng.uniform(0.0, 1.5)) + 0.5 * gaussian(n, d, rng);
    const Vector beta = gaussian(d, 1, rng).col(0);
    Dataset data;
    data.setting = Setting::iv;
    data.columns["x"] = x;
    data.columns["z"] = z;
    data.columns["y"] = x * beta + e;
    const IVRepresentation rep = identity_iv_representation(static_cast<int>(d));
    const RegularizerSpec reg{trial % 2 == 0 ? RegularizerKind::param_l2 : RegularizerKind::function_l2, 1e-2};
    SaddleOptions opt;
    opt.tol = 1e-10;
    const IVSolution cf = solve_iv_saddle(rep, data, reg, SolveMethod::closed_form, opt);
    const IVSolution eg = solve_iv_saddle(rep, data, reg, SolveMethod::gda, opt);
    worst = std::max(worst, (eg.u - cf.u).norm());
    iterations = std::max(iterations, eg.diagnostics.iterations);
  }
  return {worst < 1e-4, "max |u_gda - u_closed| " + fmt(worst) + " (at most " + std::to_string(iterations) +
                            " iterations), limit 1e-4"};
}

// 7: Demand Design, spectral IV-OC against direct ridge
Outcome demand_design() {
  ExperimentConfig cfg = load_experiment_config(std::string(SPECCAUSAL_CONFIG_DIR) + "/demand_design.json");
  cfg.n_train = 5000;
  cfg.generator.rho = 0.5;
  cfg.estimator.lambdas = {1e-4, 1e-3, 1e-2};
  cfg.replicates = 1;
  const ResultRecord r = run_experiment(cfg, 1).at(0);
  if (!r.ok()) return {false, "replicate failed in " + r.failed_phase + ": " + r.error};
  const double ridge = r.baseline_mse.at("direct_ridge");
  return {r.oos_mse <= 0.8 * ridge, "spectral " + fmt(r.oos_mse) + " at lambda " + fmt(r.lambda_selected) +
                                        ", direct_ridge " + fmt(ridge) + ", ratio " + fmt(r.oos_mse / ridge) +
                                        ", limit 0.8"};
}

// 8: learned proxy representation against the exact bridge
Outcome pcl() {
  ExperimentConfig cfg = parse_experiment_config(nlohmann::json{
      {"setting", "pcl"},
      {"generator", {{"name", "pcl_discrete"}}},
      {"representation",
       {{"d_x", 4}, {"d_z", 4}, {"d_o", 4}, {"d_y", 8}, {"epochs", 60}, {"networks", {{"phi", {{"hidden", {32}}}},
                                                                                       {"psi", {{"hidden", {32}}}},
                                                                                       {"xi", {{"hidden", {32}}}},
                                                                                       {"nu", {{"hidden", {32}}}}}}}},
      {"n_train", 20000},
      {"seed", 808}});
  const std::uint64_t seed = replicate_seed(cfg, 0);
  const Dataset train = generate_dataset(cfg, DataRole::train, seed);
  const DataSplit split = split_rows(cfg, static_cast<std::size_t>(train.rows()), seed);
  const Dataset rep_data = train.subset(split.representation), est_data = train.subset(split.estimation);
  const TrainedRepresentation tr = train_configured_representation(cfg, rep_data, nullptr, seed);
  const auto& rep = std::get<ConditionalRepresentation>(tr.rep);
  const auto sol = std::get<ConditionalSolution>(fit_configured(cfg, tr.rep, est_data, 1e-4));
  const BridgeSolution bridge = solve_bridge_exact(default_pcl_spec());
  bool ok = true;
  std::string detail;
  for (Eigen::Index x = 0; x < bridge.effect.size(); ++x) {
    const Vector xv = one_hot_rows(bridge.effect.size()).col(x);
    const double est = pcl_causal_effect(sol, rep, xv, est_data.col("w"));
    const double rel = std::abs(est - bridge.effect(x)) / std::abs(bridge.effect(x));
    ok = ok && rel <= 0.1;
    detail += "x=" + std::to_string(x) + ": " + fmt(est) + " vs " + fmt(bridge.effect(x)) + " (rel " + fmt(rel) + ") ";
  }
  return {ok, detail + "limit 10%"};
}

// 9: generator fixtures and moments
Outcome generators() {
  std::string bad;
  const auto need = [&](bool cond, const std::string& what) {
    if (!cond) bad += what + "; ";
  };
  need(std::abs(demand_h(5.0) + 1.0) < 1e-6, "h(5)");
  need(std::abs(demand_h(0.0) + 1.9166667) < 1e-6, "h(0)");
  need(std::abs(demand_f(25.0, 5.0, 4.0) + 90.0) < 1e-6, "f(25,5,4)");
  need(digit_index(0.0) == 5 && digit_index(4.0) == 9 && digit_index(-4.0) == 0, "digit index");

  const Dataset d = gen_demand_design(100000, 0.5, 909, false);
  const Eigen::Index n = d.rows();
  Vector eps(n), v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    eps(i) = d.col("y")(i, 0) - (*d.truth)(i);
    v(i) = d.col("x")(i, 0) - 25.0 - (d.col("z")(i, 0) + 3.0) * demand_h(d.col("o")(i, 0));
  }
  const double s_mean = d.col("o").col(1).mean();
  const Vector ec = eps.array() - eps.mean(), vc = v.array() - v.mean();
  const double var_e = ec.squaredNorm() / static_cast<double>(n);
  const double corr = ec.dot(vc) / std::sqrt(ec.squaredNorm() * vc.squaredNorm());
  need(std::abs(s_mean - 4.0) <= 0.05, "mean S");
  need(std::abs(corr - 0.5) <= 0.02, "Corr(eps, V)");
  need(std::abs(var_e - 1.0) <= 0.02, "Var eps");
  return {bad.empty(), "mean S " + fmt(s_mean) + ", Corr(eps,V) " + fmt(corr) + ", Var eps " + fmt(var_e) +
                           (bad.empty() ? "" : ", failed: " + bad)};
}

// 10: reruns of a learned experiment give identical records
Outcome determinism() {
  const ExperimentConfig cfg = parse_experiment_config(nlohmann::json{
      {"setting", "ivoc"},
      {"generator", {{"name", "ivoc_discrete"}}},
      {"representation", {{"d_x", 3}, {"d_z", 3}, {"d_o", 2}, {"d_y", 4}, {"epochs", 5}}},
      {"n_train", 1000},
      {"n_test", 200},
      {"replicates", 2},
      {"seed", 1010}});
  const auto a = run_experiment(cfg, 1);
  const auto b = run_experiment(cfg, 2);
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) {
    same = a[i].ok() && to_json(a[i], false).dump() == to_json(b[i], false).dump();
  }
  return {same, same ? "records identical (timing excluded)" : "records differ or a replicate failed"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient check, both losses", 30, grad_checks},
      {2, "kronecker identity", 5, kronecker_identity},
      {3, "cosine toy ratio, l2", 180, [] { return cosine_toy(ContrastiveLoss::l2); }},
      {3, "cosine toy ratio, mle", 180, [] { return cosine_toy(ContrastiveLoss::mle); }},
      {4, "exact conditional expectation", 10, linearization},
      {5, "linear-Gaussian IV slopes", 120, linear_gaussian},
      {6, "extragradient vs closed form", 120, gda_vs_closed_form},
      {7, "demand design vs direct ridge", 600, demand_design},
      {8, "discrete proxy causal effect", 300, pcl},
      {9, "generator fixtures and moments", 60, generators},
      {10, "experiment determinism", 60, determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : all) {
    if (!wanted.empty() && wanted.count(c.id) == 0) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.time_limit_s) {
      o.passed = false;
      o.detail += "; over time limit " + fmt(c.time_limit_s) + "s";
    }
    if (!o.passed) ++failures;
    std::printf("%s [%d] %s: %s (%.1fs)\n", o.passed ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
