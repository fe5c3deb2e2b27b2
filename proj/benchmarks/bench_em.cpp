#include <benchmark/benchmark.h>

#include "lqhmm/em.hpp"
#include "lqhmm/simulate.hpp"

using namespace lqhmm;

namespace {

SimulatedPanel benchmark_panel() {
  SimScenario scen = default_scenario();
  scen.seed = 17;
  return generate(scen);
}

const SimulatedPanel& panel() {
  static const SimulatedPanel p = benchmark_panel();
  return p;
}

QldoParams start_params(int m, int G) {
  EmConfig config;
  config.threads = 1;
  return initialize(panel().data, ModelSpec(QuantileLevel(0.5), m, G), 0, config);
}

void bm_e_step(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const int G = static_cast<int>(state.range(1));
  const QldoParams params = start_params(m, G);
  for (auto _ : state) {
    Posteriors post = e_step(panel().data, params, QuantileLevel(0.5));
    benchmark::DoNotOptimize(post.loglik);
  }
}
BENCHMARK(bm_e_step)->Args({4, 2})->Args({5, 3})->Unit(benchmark::kMillisecond);

void bm_total_loglik(benchmark::State& state) {
  const QldoParams params = start_params(4, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(total_loglik(panel().data, params, QuantileLevel(0.5)));
  }
}
BENCHMARK(bm_total_loglik)->Unit(benchmark::kMillisecond);

void bm_m_step_theta(benchmark::State& state) {
  const QldoParams params = start_params(4, 2);
  const Posteriors post = e_step(panel().data, params, QuantileLevel(0.5));
  Theta warm{params.beta, params.alpha};
  for (auto _ : state) {
    Theta theta = m_step_theta(post, panel().data, QuantileLevel(0.5), 1e-8, &warm);
    benchmark::DoNotOptimize(theta.alpha);
  }
}
BENCHMARK(bm_m_step_theta)->Unit(benchmark::kMillisecond);

void bm_em_iteration(benchmark::State& state) {
  QldoParams params = start_params(4, 2);
  Theta theta{params.beta, params.alpha};
  std::vector<int> T;
  for (const auto& s : panel().data.subjects) T.push_back(s.occasions());
  for (auto _ : state) {
    const Posteriors post = e_step(panel().data, params, QuantileLevel(0.5));
    theta = m_step_theta(post, panel().data, QuantileLevel(0.5), 1e-8, &theta);
    const ChainUpdate chain = m_step_chain(post, panel().data);
    params.beta = theta.beta;
    params.alpha = theta.alpha;
    params.sigma = m_step_sigma(post, panel().data, theta, QuantileLevel(0.5));
    params.delta = chain.delta;
    params.Q = chain.Q;
    LambdaUpdate warm{params.lambda0, params.lambda1, false};
    const LambdaUpdate lam = m_step_lambda(post.zeta, T, 2, 1e-8, &warm);
    params.lambda0 = lam.lambda0;
    params.lambda1 = lam.lambda1;
    benchmark::DoNotOptimize(post.loglik);
  }
}
BENCHMARK(bm_em_iteration)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
