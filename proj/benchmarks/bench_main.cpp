#include "speccausal/contrastive.hpp"
#include "speccausal/linalg.hpp"
#include "speccausal/neuralnet.hpp"
#include "speccausal/rng.hpp"
#include "speccausal/saddle.hpp"

#include <benchmark/benchmark.h>

using namespace speccausal;

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void BM_KronApply(benchmark::State& state) {
  const auto d = state.range(0);
  const Matrix C = gaussian(d, d, 1), D = gaussian(d, d, 2), G = gaussian(d, d, 3);
  for (auto _ : state) benchmark::DoNotOptimize(kron_apply(C, D, G));
}
BENCHMARK(BM_KronApply)->Arg(8)->Arg(32)->Arg(64);

void BM_ExplicitKronecker(benchmark::State& state) {
  const auto d = state.range(0);
  const Matrix C = gaussian(d, d, 1), D = gaussian(d, d, 2), G = gaussian(d, d, 3);
  Vector g(d * d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = G.data()[i];
  for (auto _ : state) benchmark::DoNotOptimize(Vector(kronecker(C, D) * g));
}
BENCHMARK(BM_ExplicitKronecker)->Arg(8)->Arg(32);

void BM_ContrastiveLoss(benchmark::State& state) {
  const auto kind = state.range(1) == 0 ? ContrastiveLoss::l2 : ContrastiveLoss::mle;
  const Matrix s = gaussian(state.range(0), state.range(0), 4);
  for (auto _ : state) benchmark::DoNotOptimize(contrastive_loss(kind, s));
}
BENCHMARK(BM_ContrastiveLoss)->Args({256, 0})->Args({256, 1})->Args({1024, 0})->Args({1024, 1});

void BM_ForwardBackward(benchmark::State& state) {
  FeatureNetwork net(NetworkSpec::mlp(16, {64, 64}, 8, Activation::relu, Activation::linear, false), 5);
  const Matrix batch = gaussian(state.range(0), 16, 6);
  const Matrix upstream = gaussian(state.range(0), 8, 7);
  for (auto _ : state) {
    ForwardResult f = forward(net, batch, Mode::train);
    benchmark::DoNotOptimize(backward(net, f.cache, upstream));
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(256)->Arg(1024);

void BM_ClosedFormSaddle(benchmark::State& state) {
  const auto p = state.range(0);
  const Eigen::Index n = 5000;
  const Matrix kappa = gaussian(n, p, 8);
  const Matrix chi = kappa + 0.5 * gaussian(n, p, 9);
  const Vector y = gaussian(n, 1, 10).col(0);
  const auto kind = state.range(1) == 0 ? RegularizerKind::param_l2 : RegularizerKind::function_l2;
  const QuadraticSaddle q = build_saddle(kappa, chi, y, Vector::Ones(n), {kind, 1e-3});
  for (auto _ : state) benchmark::DoNotOptimize(solve_closed_form(q));
}
BENCHMARK(BM_ClosedFormSaddle)->Args({16, 0})->Args({16, 1})->Args({128, 0})->Args({128, 1});

}  // namespace
BENCHMARK_MAIN();
