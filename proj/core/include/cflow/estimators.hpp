#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cflow/metric_graph.hpp"
#include "cflow/sde_flows.hpp"
#include "json.hpp"

namespace cflow {

enum class Comparison { kNone, kAtMost, kAtLeast, kWithin };
enum class Verdict { kPass, kFail, kInconclusive };

std::string to_string(Verdict v);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline constexpr double kZ95 = 1.959963984540054;

// Wilson score interval for a binomial proportion, clipped to [0, 1].
Interval wilson_interval(std::size_t successes, std::size_t n, double z = kZ95);
// Normal-approximation interval for a mean.
Interval mean_interval(double mean, double sd, std::size_t n, double z = kZ95);

struct EstimateReport {
  std::string name;
  double estimate = 0.0;
  std::size_t samples = 0;
  Interval ci;
  Comparison comparison = Comparison::kNone;
  double target = 0.0;
  double tolerance = 0.0;  // kWithin only
  Verdict verdict = Verdict::kInconclusive;
  double censored_fraction = 0.0;
  nlohmann::json details = nlohmann::json::object();

  // Sets the verdict from the interval: a bound passes on the conservative
  // edge, fails when the whole interval violates it, else is inconclusive.
  void decide();
  nlohmann::json to_json() const;
};

nlohmann::json reports_to_json(const std::vector<EstimateReport>& reports);
std::string reports_to_csv(const std::vector<EstimateReport>& reports);
// 0 if every verdict passes, 1 if any fails, else 3.
int exit_code_for(const std::vector<EstimateReport>& reports);

// Two-sample Kolmogorov-Smirnov statistic and its 5% critical value.
double ks_statistic(std::vector<double> a, std::vector<double> b);
double ks_threshold(std::size_t n, std::size_t m);

struct MonteCarloOptions {
  int steps = 256;  // grid steps per simulated horizon
  int threads = 1;
};

// P[T_meet <= c rho(x,y)^2] for the two-point motion of the flow. With an
// exit region the event is {sigma ^ tau <= c rho^2}, sigma the first exit.
EstimateReport estimate_meeting_probability(const FlowKind& kind, const MetricGraph& g, const GraphPoint& x,
                                            const GraphPoint& y, double c, std::size_t N, std::uint64_t seed,
                                            const MonteCarloOptions& opt = {},
                                            const std::optional<Region>& exit_region = std::nullopt);

// Constants of the coalescence property on an interval K = [lo, hi]:
// alpha = 2, kappa = 1, C from the pigeonhole bound, beta given, and p set to
// half the smallest lower Wilson edge over a grid of pairs.
struct PropertyConstants {
  double alpha = 2.0;
  double beta = 1.0;
  double kappa = 1.0;
  double p = 0.0;
  double C = 0.0;
  int grid_points = 0;
  double worst_lower = 0.0;

  double C1() const { return beta * std::pow(C, alpha) / p; }
  double C2() const { return C1() / (kappa * alpha - 1); }
  nlohmann::json to_json() const;
};

PropertyConstants certify_property_p(const FlowKind& kind, double lo, double hi, double beta, int grid_points,
                                     std::size_t N, std::uint64_t seed, const MonteCarloOptions& opt = {});

struct CoalescenceOptions {
  double dt = 1e-6;
  double horizon = 1.0;
  int threads = 1;
};

// E[sigma^n ^ tau^n_m] for n coalescing line motions started at the
// maximal-spread configuration (i + 1/2)/n of K = [lo, hi].
EstimateReport estimate_coalescence_time(const FlowKind& kind, int n, int m, double lo, double hi, std::size_t N,
                                         std::uint64_t seed, const PropertyConstants& pc,
                                         const CoalescenceOptions& opt = {});

// P[sigma^n ^ tau^n_{n-1} > j beta eps^alpha] <= (1 - p)^j with eps = C n^-kappa.
std::vector<EstimateReport> geometric_tail_check(const FlowKind& kind, int n, double lo, double hi, int j_max,
                                                 std::size_t N, std::uint64_t seed, const PropertyConstants& pc,
                                                 const CoalescenceOptions& opt = {});

// Mean and max over seeds of count_distinct(0, t, whole line) for n starts
// spread over [lo, hi] at time 0; the last report carries the strict
// monotonicity verdict.
std::vector<EstimateReport> distinct_points_curve(const FlowKind& kind, int n_starts, double lo, double hi,
                                                  const std::vector<double>& times, int seeds, std::uint64_t seed,
                                                  double dt = 1e-3, int threads = 1);

// sup over starts of P[sup_{[0,t]} rho(X, x) > r] / t along a decreasing
// ladder; the last report carries the decay verdict (ratio at the smallest
// t below `fraction` times the ratio at the largest).
std::vector<EstimateReport> small_time_exit_curve(const FlowKind& kind, const MetricGraph& g,
                                                  const std::vector<GraphPoint>& starts, double r,
                                                  const std::vector<double>& t_ladder, std::size_t N,
                                                  std::uint64_t seed, double fraction = 0.1,
                                                  const MonteCarloOptions& opt = {});

// KS comparison of lambda^-1 |X(lambda^2 t)| (X from x) against |X(t)| (X from x / lambda).
EstimateReport scaling_check_walsh(const MetricGraph& g, double lambda, const GraphPoint& x, double t,
                                   std::size_t N, std::uint64_t seed, const MonteCarloOptions& opt = {});

}  // namespace cflow
