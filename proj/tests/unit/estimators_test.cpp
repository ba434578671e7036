#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cflow/estimators.hpp"
#include "gen.hpp"

namespace cflow {
namespace {

using testing::Gen;

// Wilson bounds as the roots of (p_hat - p)^2 = z^2 p (1 - p) / n.
Interval wilson_roots(double k, double n, double z) {
  const double ph = k / n, c = z * z / n;
  const double A = 1 + c, B = -(2 * ph + c), C = ph * ph;
  const double disc = std::sqrt(B * B - 4 * A * C);
  return {(-B - disc) / (2 * A), (-B + disc) / (2 * A)};
}

double ks_brute(const std::vector<double>& a, const std::vector<double>& b) {
  std::set<double> pts(a.begin(), a.end());
  pts.insert(b.begin(), b.end());
  double d = 0;
  for (double x : pts) {
    const double fa = static_cast<double>(std::count_if(a.begin(), a.end(), [x](double v) { return v <= x; })) / a.size();
    const double fb = static_cast<double>(std::count_if(b.begin(), b.end(), [x](double v) { return v <= x; })) / b.size();
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

TEST(Wilson, KnownValues) {
  const auto a = wilson_interval(0, 10);
  EXPECT_EQ(a.lo, 0.0);
  EXPECT_NEAR(a.hi, 0.2775, 1e-4);
  const auto b = wilson_interval(5, 10);
  EXPECT_NEAR(b.lo, 0.2366, 1e-4);
  EXPECT_NEAR(b.hi, 0.7634, 1e-4);
  const auto c = wilson_interval(0, 0);
  EXPECT_EQ(c.lo, 0.0);
  EXPECT_EQ(c.hi, 1.0);
}

TEST(Wilson, MatchesQuadraticRoots) {
  Gen gen(1);
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = static_cast<std::size_t>(gen.integer(1, 100000));
    const auto k = static_cast<std::size_t>(gen.integer(0, static_cast<int>(n)));
    const auto w = wilson_interval(k, n);
    const auto r = wilson_roots(static_cast<double>(k), static_cast<double>(n), kZ95);
    EXPECT_NEAR(w.lo, std::max(0.0, r.lo), 1e-9);
    EXPECT_NEAR(w.hi, std::min(1.0, r.hi), 1e-9);
    EXPECT_LE(w.lo, static_cast<double>(k) / n);
    EXPECT_GE(w.hi, static_cast<double>(k) / n);
  }
}

TEST(Verdicts, BoundsAndBands) {
  auto rep = [](double est, double lo, double hi, Comparison c, double target, double tol = 0) {
    EstimateReport r;
    r.estimate = est;
    r.ci = {lo, hi};
    r.comparison = c;
    r.target = target;
    r.tolerance = tol;
    r.decide();
    return r.verdict;
  };
  EXPECT_EQ(rep(0.1, 0.05, 0.15, Comparison::kAtMost, 0.2), Verdict::kPass);
  EXPECT_EQ(rep(0.3, 0.25, 0.35, Comparison::kAtMost, 0.2), Verdict::kFail);
  EXPECT_EQ(rep(0.2, 0.15, 0.25, Comparison::kAtMost, 0.2), Verdict::kInconclusive);
  EXPECT_EQ(rep(0.3, 0.25, 0.35, Comparison::kAtLeast, 0.2), Verdict::kPass);
  EXPECT_EQ(rep(0.1, 0.05, 0.15, Comparison::kAtLeast, 0.2), Verdict::kFail);
  EXPECT_EQ(rep(0.2, 0.15, 0.25, Comparison::kAtLeast, 0.2), Verdict::kInconclusive);
  EXPECT_EQ(rep(0.48, 0.47, 0.49, Comparison::kWithin, 0.4795, 0.02), Verdict::kPass);
  EXPECT_EQ(rep(0.40, 0.39, 0.41, Comparison::kWithin, 0.4795, 0.02), Verdict::kFail);
  // Wide interval: cannot confirm the band.
  EXPECT_EQ(rep(0.48, 0.2, 0.76, Comparison::kWithin, 0.4795, 0.02), Verdict::kInconclusive);
  EXPECT_EQ(rep(9, 0, 100, Comparison::kNone, 0), Verdict::kPass);
}

TEST(Verdicts, ExitCodesAndSerialization) {
  std::vector<EstimateReport> rs(3);
  for (auto& r : rs) r.verdict = Verdict::kPass;
  EXPECT_EQ(exit_code_for(rs), 0);
  rs[1].verdict = Verdict::kInconclusive;
  EXPECT_EQ(exit_code_for(rs), 3);
  rs[2].verdict = Verdict::kFail;
  EXPECT_EQ(exit_code_for(rs), 1);
  EXPECT_EQ(exit_code_for({}), 0);

  rs[0].name = "meeting";
  rs[0].estimate = 0.5;
  const auto csv = reports_to_csv(rs);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "name,estimate,ci_lo,ci_hi,target,verdict");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const auto j = reports_to_json(rs);
  ASSERT_EQ(j.size(), 3u);
  EXPECT_EQ(j[0]["name"], "meeting");
  EXPECT_EQ(j[2]["verdict"], "fail");
}

TEST(Ks, MatchesBruteForce) {
  Gen gen(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(static_cast<std::size_t>(gen.integer(1, 40))), b(static_cast<std::size_t>(gen.integer(1, 40)));
    // Coarse values force ties.
    for (auto& x : a) x = gen.integer(0, 10) * 0.5;
    for (auto& x : b) x = gen.integer(0, 12) * 0.5;
    EXPECT_NEAR(ks_statistic(a, b), ks_brute(a, b), 1e-12);
  }
  EXPECT_THROW(ks_statistic({}, {1.0}), ParameterError);
  EXPECT_NEAR(ks_threshold(10000, 10000), 1.358 * std::sqrt(2.0 / 10000), 1e-15);
}

TEST(Meeting, LineBrownianMotionsMatchTheReflectionPrinciple) {
  const auto g = MetricGraph::line();
  // 2 (1 - Phi(1 / sqrt 2)) for two independent BMs at distance 1 by time 1.
  const double exact = std::erfc(0.5);
  auto r = estimate_meeting_probability(FlowKind::coalescing_bm(), g, g.from_signed(0), g.from_signed(1), 1.0, 20000, 3);
  EXPECT_NEAR(r.estimate, exact, 0.02);
  EXPECT_LE(r.ci.lo, r.estimate);
  EXPECT_GE(r.ci.hi, r.estimate);
  EXPECT_EQ(r.samples, 20000u);
  // Same point: meeting is immediate.
  auto same = estimate_meeting_probability(FlowKind::coalescing_bm(), g, g.from_signed(0.3), g.from_signed(0.3), 1.0, 10, 3);
  EXPECT_EQ(same.estimate, 1.0);
  EXPECT_THROW(estimate_meeting_probability(FlowKind::coalescing_bm(), g, g.from_signed(0), g.from_signed(1), 1.0, 0, 3),
               ParameterError);
}

TEST(Meeting, ThreadCountDoesNotChangeResults) {
  const auto g = MetricGraph::star({0.25, 0.25, 0.5});
  const auto kind = FlowKind::walsh({0.25, 0.25, 0.5});
  const auto a = estimate_meeting_probability(kind, g, g.star_point(0, 0.5), g.star_point(2, 0.25), 2.0, 3000, 7, {128, 1});
  const auto b = estimate_meeting_probability(kind, g, g.star_point(0, 0.5), g.star_point(2, 0.25), 2.0, 3000, 7, {128, 3});
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_GT(a.ci.lo, 0.02);
}

TEST(Meeting, ExitRegionOnlyShortensTheEvent) {
  const auto g = MetricGraph::line();
  const auto kind = FlowKind::coalescing_bm();
  const auto plain = estimate_meeting_probability(kind, g, g.from_signed(0.2), g.from_signed(0.6), 1.0, 5000, 9);
  const auto with_exit = estimate_meeting_probability(kind, g, g.from_signed(0.2), g.from_signed(0.6), 1.0, 5000, 9, {},
                                                      Region::signed_interval(0, 1));
  EXPECT_GE(with_exit.estimate, plain.estimate);
}

TEST(Scaling, WalshKsBelowThreshold) {
  const auto g = MetricGraph::star({1.0 / 3, 1.0 / 3, 1.0 / 3});
  const auto r = scaling_check_walsh(g, 2.0, g.star_point(0, 0.5), 1.0, 4000, 5);
  EXPECT_EQ(r.comparison, Comparison::kAtMost);
  EXPECT_NEAR(r.target, ks_threshold(4000, 4000), 1e-12);
  EXPECT_EQ(r.verdict, Verdict::kPass);
}

TEST(DistinctCurve, DecreasesForCoalescingMotion) {
  const auto reps = distinct_points_curve(FlowKind::coalescing_bm(), 50, 0, 1, {0.01, 0.1, 1}, 5, 4);
  ASSERT_EQ(reps.size(), 4u);
  EXPECT_GT(reps[0].estimate, reps[1].estimate);
  EXPECT_GT(reps[1].estimate, reps[2].estimate);
  EXPECT_EQ(reps.back().name, "distinct_points_monotone");
  EXPECT_EQ(reps.back().verdict, Verdict::kPass);
}

TEST(PropertyConstants, CertifiedForCoalescingMotion) {
  const auto pc = certify_property_p(FlowKind::coalescing_bm(), 0, 1, 1.0, 4, 2000, 2, {128, 1});
  EXPECT_EQ(pc.alpha, 2.0);
  EXPECT_EQ(pc.kappa, 1.0);
  EXPECT_EQ(pc.C, 2.0);
  EXPECT_GT(pc.p, 0.0);
  EXPECT_NEAR(pc.p, pc.worst_lower / 2, 1e-15);
  EXPECT_NEAR(pc.C2(), pc.C1() / (pc.kappa * pc.alpha - 1), 1e-12);
  EXPECT_THROW(certify_property_p(FlowKind::walsh({0.5, 0.5}), 0, 1, 1.0, 4, 100, 2), ParameterError);
}

}  // namespace
}  // namespace cflow
