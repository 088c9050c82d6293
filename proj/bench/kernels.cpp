// Serial reference vs OpenMP kernels. Arg 0 of each benchmark is the policy.
#include <benchmark/benchmark.h>

#include "pdemee/bench.hpp"
#include "pdemee/estimators.hpp"

using namespace pdemee;

namespace {

ExecPolicy policy(const benchmark::State& state) {
  return state.range(0) ? ExecPolicy::Parallel : ExecPolicy::Serial;
}

struct Fixture {
  MrtDataset data;
  ProximalOutcomes outcomes;
  WeightSet weights;
  EstimatorSpec spec;

  explicit Fixture(int n) : data(make(n)), outcomes(build_proximal_outcomes(data)) {
    spec.moderator_cols = {0, 1};
    spec.control_cols = {0, 1};
    weights = compute_weights(data, outcomes, NumeratorPolicy::default_for(data), data.delta() - 1, spec.moderator_cols);
  }

  static MrtDataset make(int n) {
    GenerativeConfig c;
    c.n = n;
    c.delta = 10;
    c.seed = 7;
    return generate_trial(c);
  }
};

const Fixture& fixture() {
  static const Fixture f(2000);
  return f;
}

void BM_Weights(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(compute_weights(f.data, f.outcomes, NumeratorPolicy::default_for(f.data), 9));
}

void BM_ScoreAndJacobian(benchmark::State& state) {
  const auto& f = fixture();
  const EmeeEquation eq(f.data, f.outcomes, f.weights, f.spec);
  const Vector theta = Vector::Constant(eq.dim(), 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(mean_terms(eq, theta, Need::ScoreAndJacobian, policy(state)));
}

void BM_Fit(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(fit(f.data, f.outcomes, f.spec, {}, policy(state)));
}

void BM_Replications(benchmark::State& state) {
  GenerativeConfig c;
  c.delta = 3;
  EstimatorSpec s;
  s.moderator_cols = {0};
  s.control_cols = {0, 1};
  for (auto _ : state)
    benchmark::DoNotOptimize(run_replications(c, {{"pd-EMEE", s}}, 64, {{0.28}}, 0.05, policy(state)));
}

}  // namespace

BENCHMARK(BM_Weights)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoreAndJacobian)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Fit)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Replications)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
