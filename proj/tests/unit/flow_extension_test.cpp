#include <gtest/gtest.h>

#include <algorithm>
#include <memory>

#include "cflow/flow_extension.hpp"
#include "cflow/sde_flows.hpp"
#include "gen.hpp"

namespace cflow {
namespace {

using testing::Gen;

const MetricGraph kLine = MetricGraph::line();

std::shared_ptr<const Skeleton> make_skeleton(const FlowKind& kind, std::uint64_t seed) {
  SimulationConfig cfg;
  const auto g = kind.graph();
  return std::make_shared<const Skeleton>(simulate(kind, g, net_starts(kind, g, cfg), seed, cfg));
}

Path constant(double x, std::size_t len = 10) {
  return Path(0, 0.1, std::vector<GraphPoint>(len, kLine.from_signed(x)));
}

TEST(EpsilonSchedule, NonIncreasingToTheFloor) {
  const EpsilonSchedule e{0x1p-12};
  for (int k = 1; k < 40; ++k) {
    EXPECT_GT(e(k), 0.0);
    EXPECT_LE(e(k + 1), e(k));
  }
  EXPECT_EQ(e(1), 0.5);
  EXPECT_EQ(e(100), 0x1p-12);
  EXPECT_EQ(e.floor_index(), 12);
}

TEST(Selector, ConstantSequence) {
  const std::vector<Path> seq(8, constant(0.3));
  EXPECT_EQ(seq[select_limit_point(kLine, seq)], constant(0.3));
}

TEST(Selector, ConvergingSequenceReturnsItsLimit) {
  std::vector<Path> seq;
  for (int n = 1; n <= 6; ++n) seq.push_back(constant(1.0 + std::ldexp(1.0, -n)));
  for (int n = 0; n < 5; ++n) seq.push_back(constant(1.0));
  const auto pos = select_limit_point(kLine, seq);
  EXPECT_EQ(seq[pos], constant(1.0));
}

TEST(Selector, AlternatingSequencePrefersTheEarliestValue) {
  std::vector<Path> seq;
  for (int n = 0; n < 12; ++n) seq.push_back(constant(n % 2 ? 2.0 : 0.0));
  const auto pos = select_limit_point(kLine, seq);
  EXPECT_EQ(seq[pos], constant(0.0));
  EXPECT_GE(pos, seq.size() / 2);
}

TEST(Selector, OutputRecursInTheTail) {
  Gen gen(5);
  for (int trial = 0; trial < 300; ++trial) {
    const auto len = static_cast<std::size_t>(gen.integer(1, 30));
    const int alphabet = gen.integer(1, 5);
    std::vector<int> v(len);
    for (auto& x : v) x = gen.integer(0, alphabet - 1);
    const double radius = gen.coin() ? 0.5 : 2.5;
    const auto pos = select_limit_index(
        len, [&](std::size_t a, std::size_t b) { return v[a] == v[b]; },
        [&](std::size_t a, std::size_t b) { return std::abs(v[a] - v[b]); }, 5, radius);
    ASSERT_LT(pos, len);
    const bool stable = len >= 5 && std::all_of(v.end() - 5, v.end(), [&](int x) { return x == v[len - 5]; });
    if (stable) EXPECT_EQ(pos, len - 5);
    else EXPECT_GE(pos, len / 2);
    std::size_t near = 0;
    for (std::size_t i = len / 2; i < len; ++i) near += std::abs(v[i] - v[pos]) <= radius;
    EXPECT_GE(near, 1u);
  }
  EXPECT_THROW(select_limit_index(0, nullptr, nullptr, 5, 1.0), std::invalid_argument);
}

TEST(FlowMap, AnchoringAndSkeletonPreservation) {
  for (const auto& kind : {FlowKind::coalescing_bm(), FlowKind::walsh({0.2, 0.3, 0.5}), FlowKind::tanaka()}) {
    const auto sk = make_skeleton(kind, 3);
    const FlowMap theta(sk);
    const CounterRng rng(9);
    for (const auto& q : sample_flow_queries(*sk, 300, 4)) {
      EXPECT_EQ(theta.value(q.s, q.s, q.x), q.x);
      EXPECT_EQ(theta.trajectory(q.s, q.x).samples().front(), q.x);
    }
    for (std::uint64_t i = 0; i < 300; ++i) {
      const auto n = static_cast<std::size_t>(rng.uniform(StreamTag::kTrial, 0, i) * static_cast<double>(sk->size()));
      const std::int64_t s0 = sk->start_step(n);
      const std::int64_t s = s0 + static_cast<std::int64_t>(rng.uniform(StreamTag::kTrial, 1, i) *
                                                             static_cast<double>(sk->horizon_step() - s0));
      const std::int64_t t = s + static_cast<std::int64_t>(rng.uniform(StreamTag::kTrial, 2, i) *
                                                           static_cast<double>(sk->horizon_step() - s + 1));
      ASSERT_EQ(theta.value(s, t, sk->point(n, s)), sk->point(n, t)) << kind.name();
    }
  }
}

TEST(FlowMap, MemoizationDoesNotChangeResults) {
  const auto sk = make_skeleton(FlowKind::coalescing_bm(), 6);
  const FlowMap a(sk), b(sk);
  const auto qs = sample_flow_queries(*sk, 200, 1);
  std::vector<GraphPoint> forward;
  for (const auto& q : qs) forward.push_back(a.value(q.s, q.u, q.x));
  for (std::size_t i = qs.size(); i-- > 0;) EXPECT_EQ(b.value(qs[i].s, qs[i].u, qs[i].x), forward[i]);
  for (std::size_t i = 0; i < qs.size(); ++i) EXPECT_EQ(a.value(qs[i].s, qs[i].u, qs[i].x), forward[i]);
}

TEST(FlowMap, DensityViolationCarriesTheGap) {
  const auto sk = make_skeleton(FlowKind::coalescing_bm(), 1);
  const FlowMap theta(sk);
  try {
    theta.value(0, 10, kLine.from_signed(40.0));
    FAIL() << "expected a density violation";
  } catch (const DensityViolation& e) {
    EXPECT_GT(e.gap(), 0.5);
  }
  EXPECT_THROW(theta.value(10, 5, kLine.from_signed(0.0)), std::invalid_argument);
}

TEST(FlowMap, ApproximatingIndicesFollowTheDefinition) {
  const auto sk = make_skeleton(FlowKind::coalescing_bm(), 2);
  const FlowMap theta(sk);
  Gen gen(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t s = gen.integer(0, 500);
    const auto x = kLine.from_signed(quantize(gen.uniform(-0.5, 0.5)));
    const auto seq = theta.approximating_indices(s, x);
    ASSERT_FALSE(seq.empty());
    for (std::size_t k = 0; k < seq.size(); ++k) {
      const double eps = theta.schedule()(static_cast<int>(k) + 1);
      // n_k = inf {n in I^s : rho(phi_n(s), x) < eps_k}, by brute force.
      std::size_t expected = sk->size();
      for (std::size_t n = 0; n < sk->active_count(s); ++n) {
        if (kLine.distance(sk->point(n, s), x) < eps) {
          expected = n;
          break;
        }
      }
      ASSERT_EQ(seq[k], expected);
    }
  }
}

TEST(StrongFlow, IcpFlowsAreStrongWithoutRepair) {
  for (const auto& kind : {FlowKind::coalescing_bm(), FlowKind::walsh({0.2, 0.3, 0.5})}) {
    const auto sk = make_skeleton(kind, 11);
    const FlowMap theta(sk);
    const auto qs = sample_flow_queries(*sk, 2000, 12);
    const auto rep = verify_strong_flow(sk->graph(), [&](auto s, auto t, const auto& x) { return theta.value(s, t, x); },
                                        qs, 2);
    EXPECT_EQ(rep.evaluated, qs.size());
    EXPECT_EQ(rep.max_residual, 0.0) << kind.name();
    EXPECT_TRUE(rep.violations.empty());
  }
}

TEST(StrongFlow, ReportsViolationsOfABrokenFlow) {
  // Every positive time step adds 1, so composing two steps adds 2.
  const FlowProvider drift = [](std::int64_t s, std::int64_t t, const GraphPoint& x) {
    return kLine.from_signed(kLine.to_signed(x) + (t > s ? 1.0 : 0.0));
  };
  const std::vector<FlowQuery> qs{{0, 3, 8, kLine.from_signed(0.0)}, {0, 0, 8, kLine.from_signed(0.0)}};
  const auto rep = verify_strong_flow(kLine, drift, qs);
  EXPECT_EQ(rep.max_residual, 1.0);
  ASSERT_EQ(rep.violations.size(), 1u);
  EXPECT_EQ(rep.violations[0].query.t, 3);
  const std::vector<FlowQuery> unordered{{5, 3, 8, kLine.from_signed(0.0)}};
  EXPECT_THROW(verify_strong_flow(kLine, drift, unordered), std::invalid_argument);
}

TEST(ClosedShell, MembershipAndDistance) {
  const auto z = ClosedShell::zero_level();
  EXPECT_TRUE(z.contains(kLine, 0, kLine.from_signed(0.0)));
  EXPECT_FALSE(z.contains(kLine, 0, kLine.from_signed(0.01)));
  EXPECT_DOUBLE_EQ(z.distance(kLine, 0, kLine.from_signed(-0.25)), 0.25);
  EXPECT_TRUE(z.regular());
  const auto none = ClosedShell::none();
  EXPECT_TRUE(none.empty());
  EXPECT_FALSE(none.contains(kLine, 0, kLine.from_signed(0.0)));
  EXPECT_EQ(none.distance(kLine, 0, kLine.from_signed(0.0)), kInfinity);

  const auto custom = ClosedShell::parse(std::string("custom:") + CFLOW_TEST_DATA_DIR + "/shell_levels.json", kLine);
  EXPECT_EQ(custom.describe(), "custom");
  EXPECT_FALSE(custom.regular());
  EXPECT_TRUE(custom.contains(kLine, 3, kLine.from_signed(0.255)));
  EXPECT_FALSE(custom.contains(kLine, 3, kLine.from_signed(0.27)));
  EXPECT_NEAR(custom.distance(kLine, 3, kLine.from_signed(0.3)), 0.04, 1e-12);
  EXPECT_THROW(ClosedShell::parse("bogus", kLine), std::invalid_argument);
  EXPECT_THROW(ClosedShell::parse("custom:/nonexistent/shell.json", kLine), std::invalid_argument);
}

void expect_trace_invariants(const RepairTrace& tr, std::int64_t s, const GraphPoint& x) {
  ASSERT_FALSE(tr.capped);
  ASSERT_EQ(tr.sigma.size(), static_cast<std::size_t>(tr.k) + 2);
  EXPECT_EQ(tr.sigma[0], s);
  EXPECT_EQ(tr.z[0], x);
  for (std::size_t k = 1; k < tr.sigma.size(); ++k) {
    EXPECT_GE(tr.sigma[k], tr.sigma[k - 1]);
    if (tr.sigma[k - 1] == kNever) {
      EXPECT_EQ(tr.sigma[k], kNever);
      EXPECT_EQ(tr.z[k], x);
    }
  }
  EXPECT_EQ(tr.sigma[static_cast<std::size_t>(tr.k)], tr.sigma[static_cast<std::size_t>(tr.k) + 1]);
  EXPECT_LE(tr.k, 2);
}

TEST(RepairedFlow, ZeroLevelRepairOnShellFlows) {
  for (const auto& kind : {FlowKind::tanaka(), FlowKind::skew(0.5), FlowKind::skew(-0.5),
                           FlowKind::tanaka_star({0.25, 0.25, 0.5}, 1)}) {
    const auto sk = make_skeleton(kind, 13);
    const FlowMap theta(sk);
    const RepairedFlow psi(theta, ClosedShell::zero_level());
    const auto qs = sample_flow_queries(*sk, 1500, 14);
    for (std::size_t i = 0; i < qs.size(); i += 5) expect_trace_invariants(psi.trace(qs[i].s, qs[i].x), qs[i].s, qs[i].x);
    const auto rep = verify_strong_flow(sk->graph(), [&](auto s, auto t, const auto& x) { return psi.value(s, t, x); },
                                        qs, 2);
    EXPECT_EQ(rep.max_residual, 0.0) << kind.name();
    // Repair keeps skeleton trajectories.
    for (std::size_t n = 0; n < sk->size(); n += 17) {
      const std::int64_t s = sk->start_step(n) + 3;
      for (std::int64_t t = s; t <= sk->horizon_step(); t += 29) ASSERT_EQ(psi.value(s, t, sk->point(n, s)), sk->point(n, t));
    }
  }
}

TEST(RepairedFlow, EmptyShellIsTheta) {
  const auto sk = make_skeleton(FlowKind::tanaka(), 2);
  const FlowMap theta(sk);
  const RepairedFlow psi(theta, ClosedShell::none());
  for (const auto& q : sample_flow_queries(*sk, 200, 3)) {
    const auto tr = psi.trace(q.s, q.x);
    EXPECT_EQ(tr.k, 1);
    EXPECT_EQ(tr.sigma[1], kNever);
    EXPECT_EQ(psi.value(q.s, q.u, q.x), theta.value(q.s, q.u, q.x));
  }
  EXPECT_THROW(RepairedFlow(theta, ClosedShell::none(), 2), std::invalid_argument);
}

TEST(StoppingTime, RestartAtFirstZeroIsConsistent) {
  for (const auto& kind : {FlowKind::coalescing_bm(), FlowKind::tanaka()}) {
    const auto sk = make_skeleton(kind, 21);
    const FlowMap theta(sk);
    const StoppingRule immediate = [](const Path& p) { return std::optional<std::int64_t>(p.start_step()); };
    const auto rule = first_hit_of_level(sk->graph());
    std::size_t stopped = 0;
    for (const auto& q : sample_flow_queries(*sk, 300, 22)) {
      EXPECT_EQ(stopping_time_consistency(theta, q.s, q.x, immediate), std::optional<double>(0.0));
      const auto r = stopping_time_consistency(theta, q.s, q.x, rule);
      if (!r) continue;
      ++stopped;
      EXPECT_EQ(*r, 0.0) << kind.name();
    }
    EXPECT_GT(stopped, 100u);
  }
}

TEST(StoppingTime, FirstHitOfLevel) {
  const auto rule = first_hit_of_level(kLine, 0.5);
  const Path p(3, 0.1, {kLine.from_signed(0.2), kLine.from_signed(0.4), kLine.from_signed(0.6)});
  EXPECT_EQ(rule(p), std::optional<std::int64_t>(5));
  const Path q(0, 0.1, {kLine.from_signed(0.2), kLine.from_signed(0.3)});
  EXPECT_FALSE(rule(q).has_value());
  const auto star = MetricGraph::star({0.5, 0.5});
  const Path r(0, 0.1, {star.star_point(0, 0.2), star.vertex_point(0)});
  EXPECT_EQ(first_hit_of_level(star)(r), std::optional<std::int64_t>(1));
}

TEST(Bifurcations, TanakaFlagsSitOnTheZeroLevel) {
  const auto sk = make_skeleton(FlowKind::tanaka(), 3);
  std::vector<std::pair<std::int64_t, GraphPoint>> samples;
  for (std::int64_t s = 0; s <= 500; s += 50)
    for (const auto& x : sk->window().box.sample(sk->graph(), 0.05)) samples.push_back({s, x});
  const auto rep = detect_bifurcations(*sk, samples);
  EXPECT_DOUBLE_EQ(rep.cluster_tol, 5 * std::sqrt(sk->dt()));
  EXPECT_TRUE(uncovered_bifurcations(*sk, ClosedShell::zero_level(), rep).empty());
  EXPECT_EQ(uncovered_bifurcations(*sk, ClosedShell::none(), rep).size(), rep.flagged.size());
  for (std::size_t i : rep.flagged) EXPECT_LE(std::abs(kLine.to_signed(rep.samples[i].x)), rep.cluster_tol);
}

}  // namespace
}  // namespace cflow
