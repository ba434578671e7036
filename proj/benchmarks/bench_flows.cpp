#include <benchmark/benchmark.h>

#include <memory>

#include "cflow/estimators.hpp"
#include "cflow/flow_extension.hpp"
#include "cflow/sde_flows.hpp"

namespace {

using namespace cflow;

FlowKind kind_at(int i) {
  switch (i) {
    case 0: return FlowKind::coalescing_bm();
    case 1: return FlowKind::walsh({1.0 / 3, 1.0 / 3, 1.0 / 3});
    case 2: return FlowKind::tanaka();
    case 3: return FlowKind::skew(0.5);
    default: return FlowKind::tanaka_star({0.25, 0.25, 0.5}, 1);
  }
}

std::shared_ptr<const Skeleton> make(const FlowKind& kind) {
  const SimulationConfig cfg;
  const auto g = kind.graph();
  return std::make_shared<const Skeleton>(simulate(kind, g, net_starts(kind, g, cfg), 1, cfg));
}

void BM_Simulate(benchmark::State& state) {
  const auto kind = kind_at(static_cast<int>(state.range(0)));
  const SimulationConfig cfg;
  const auto g = kind.graph();
  const auto starts = net_starts(kind, g, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(simulate(kind, g, starts, 1, cfg));
  state.SetLabel(kind.name());
  state.counters["entries"] = static_cast<double>(starts.size());
}
BENCHMARK(BM_Simulate)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

void BM_CheckAxioms(benchmark::State& state) {
  const auto sk = make(kind_at(static_cast<int>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(check_axioms(*sk).pass());
}
BENCHMARK(BM_CheckAxioms)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

// Fresh FlowMap per iteration, so every query pays for its selection.
void BM_ThetaValue(benchmark::State& state) {
  const auto sk = make(kind_at(static_cast<int>(state.range(0))));
  const auto qs = sample_flow_queries(*sk, 1000, 2);
  for (auto _ : state) {
    const FlowMap theta(sk);
    for (const auto& q : qs) benchmark::DoNotOptimize(theta.value(q.s, q.u, q.x));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(qs.size()));
}
BENCHMARK(BM_ThetaValue)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

void BM_RepairedValue(benchmark::State& state) {
  const auto sk = make(kind_at(static_cast<int>(state.range(0))));
  const auto qs = sample_flow_queries(*sk, 1000, 2);
  for (auto _ : state) {
    const FlowMap theta(sk);
    const RepairedFlow psi(theta, ClosedShell::zero_level());
    for (const auto& q : qs) benchmark::DoNotOptimize(psi.value(q.s, q.u, q.x));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(qs.size()));
}
BENCHMARK(BM_RepairedValue)->Arg(2)->Arg(3)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_MeetingEstimate(benchmark::State& state) {
  const auto g = MetricGraph::line();
  const auto N = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        estimate_meeting_probability(FlowKind::coalescing_bm(), g, g.from_signed(0), g.from_signed(1), 1.0, N, 1));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MeetingEstimate)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
