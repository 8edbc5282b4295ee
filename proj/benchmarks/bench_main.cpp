// Microbenchmarks of the hot paths: MLP forward/backward, input derivatives,
// interaction drift (full vs random batch), Sinkhorn divergence and exact W1.

#include <random>

#include <benchmark/benchmark.h>

#include "umfsb/mlp.hpp"
#include "umfsb/nets.hpp"
#include "umfsb/ot.hpp"
#include "umfsb/simulate.hpp"

namespace {

using namespace umfsb;

Matrix uniform_cloud(Index n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix x(n, d);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

void BM_MlpForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const ad::Mlp net({4, 64, 64, 64, 3}, ad::Activation::kTanh, rng, "bench");
  const Tensor x = Tensor::constant(uniform_cloud(state.range(0), 4, 2));
  for (auto _ : state) {
    Tensor loss = ad::sum(ad::square(net.forward(x)));
    loss.backward();
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForwardBackward)->Arg(256)->Arg(1024);

void BM_MlpInputDivergence(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const ad::Mlp net({4, 64, 64, 64, 3}, ad::Activation::kTanh, rng, "bench");
  const Tensor x = Tensor::constant(uniform_cloud(state.range(0), 4, 3));
  for (auto _ : state) {
    Tensor div = ad::input_divergence(net, x, 3);
    benchmark::DoNotOptimize(div.value().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpInputDivergence)->Arg(256)->Arg(1024);

ModelBundle attractive_bundle() {
  ModelBundle m;
  m.dim = 3;
  m.interaction.cutoff = 0.5;
  m.interaction_enabled = true;
  m.velocity = std::make_shared<AffineVectorField>(AffineVectorField::zero(3));
  m.growth = std::make_shared<ConstantScalarField>(0.0);
  m.score = std::make_shared<ConstantScalarField>(0.0);
  m.potential = std::make_shared<QuadraticPotential>();
  return m;
}

void BM_InteractionDriftFull(benchmark::State& state) {
  const ModelBundle m = attractive_bundle();
  const ParticleState s = ParticleState::at(uniform_cloud(state.range(0), 3, 4), 0.0);
  for (auto _ : state) {
    Tensor f = interaction_drift_full(m, s);
    benchmark::DoNotOptimize(f.value().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_InteractionDriftFull)->RangeMultiplier(2)->Range(256, 2048)->Complexity();

void BM_InteractionDriftRbm(benchmark::State& state) {
  const ModelBundle m = attractive_bundle();
  const ParticleState s = ParticleState::at(uniform_cloud(state.range(0), 3, 4), 0.0);
  std::mt19937_64 rng(5);
  for (auto _ : state) {
    Tensor f = interaction_drift_rbm(m, s, 16, rng);
    benchmark::DoNotOptimize(f.value().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_InteractionDriftRbm)->RangeMultiplier(2)->Range(256, 2048)->Complexity();

void BM_SinkhornDivergence(benchmark::State& state) {
  const Index n = state.range(0);
  const Matrix x = uniform_cloud(n, 3, 6), y = uniform_cloud(n, 3, 7);
  const ot::Vector a = ot::Vector::Constant(n, 1.0 / static_cast<double>(n));
  ot::SinkhornConfig cfg;
  cfg.strict = false;
  for (auto _ : state) benchmark::DoNotOptimize(ot::sinkhorn_divergence(x, a, y, a, cfg));
}
BENCHMARK(BM_SinkhornDivergence)->Arg(128)->Arg(512);

void BM_ExactW1(benchmark::State& state) {
  const Index n = state.range(0);
  const Matrix x = uniform_cloud(n, 3, 8), y = uniform_cloud(n, 3, 9);
  const ot::Vector a = ot::Vector::Constant(n, 1.0 / static_cast<double>(n));
  for (auto _ : state) benchmark::DoNotOptimize(ot::wasserstein1(x, a, y, a));
}
BENCHMARK(BM_ExactW1)->Arg(128)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
