#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cflow/metric_graph.hpp"
#include "cflow/noise.hpp"
#include "cflow/skeleton.hpp"
#include "json.hpp"

namespace cflow {

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FlowType { kCoalescingBM, kWalshStar, kTanakaLine, kSkewBM, kTanakaStar };

struct FlowKind {
  FlowType type = FlowType::kCoalescingBM;
  std::vector<double> transmission;  // Walsh and Tanaka star
  double beta = 0.0;                 // skew BM
  int sign_split = 1;                // Tanaka star: edges [0, l) carry sign +1

  static FlowKind coalescing_bm() { return {}; }
  static FlowKind walsh(std::vector<double> p) { return {FlowType::kWalshStar, std::move(p), 0.0, 1}; }
  static FlowKind tanaka() { return {FlowType::kTanakaLine, {}, 0.0, 1}; }
  static FlowKind skew(double beta) { return {FlowType::kSkewBM, {}, beta, 1}; }
  static FlowKind tanaka_star(std::vector<double> p, int l) { return {FlowType::kTanakaStar, std::move(p), 0.0, l}; }

  void validate() const;
  bool on_star() const noexcept { return type == FlowType::kWalshStar || type == FlowType::kTanakaStar; }
  bool lattice() const noexcept { return type == FlowType::kSkewBM || type == FlowType::kTanakaStar; }
  // Skew parameter of the radial sign process of the star Tanaka flow.
  double star_beta() const;
  MetricGraph graph(double r_max = kDefaultRMax) const;
  std::string name() const;

  nlohmann::json to_json() const;
  static FlowKind from_json(const nlohmann::json& j);
  static FlowType parse_type(const std::string& s);
};

struct SimulationConfig {
  double dt = 1e-3;
  double horizon = 1.0;
  double t_min = 0.0;
  double t_max = 0.5;
  double box_lo = -0.5;  // signed bounds on the line; star boxes use [0, box_hi] radially
  double box_hi = 0.5;
  double start_spacing = 0.05;       // spatial net spacing
  double start_time_spacing = 0.01;  // time between start batches
  double snap = 0.0;  // 0 selects the space quantum
  double quantum = kSpaceQuantum;
  double r_max = kDefaultRMax;

  TimeGrid grid() const;
  SkeletonWindow window(const MetricGraph& g) const;
  double snap_tolerance() const noexcept { return snap > 0 ? snap : quantum; }
  void validate() const;
  nlohmann::json to_json() const;
  static SimulationConfig from_json(const nlohmann::json& j);
};

struct StartPoint {
  std::int64_t step = 0;
  GraphPoint point{};
};

// Lattice spacing for the random-walk flows: sqrt(dt) rounded to the quantum.
double lattice_step(double dt, double quantum = kSpaceQuantum);

// Start points on a net over window x box: start_spacing in space, one batch
// every start_time_spacing in time.
// Lattice flows snap each point to the nearest site of matching parity,
// moving the start one step later when the parity disagrees.
std::vector<StartPoint> net_starts(const FlowKind& kind, const MetricGraph& g, const SimulationConfig& cfg);

Skeleton simulate_coalescing_bm(std::span<const StartPoint> starts, const CounterRng& noise,
                                const SimulationConfig& cfg);
Skeleton simulate_walsh_star(const MetricGraph& g, std::span<const StartPoint> starts, const CounterRng& noise,
                             const SimulationConfig& cfg);
Skeleton simulate_tanaka_line(std::span<const StartPoint> starts, const CounterRng& noise,
                              const SimulationConfig& cfg);
Skeleton simulate_skew_bm_lattice(double beta, std::span<const StartPoint> starts, const CounterRng& noise,
                                  const SimulationConfig& cfg);
Skeleton simulate_tanaka_star(const MetricGraph& g, int sign_split, std::span<const StartPoint> starts,
                              const CounterRng& noise, const SimulationConfig& cfg);

Skeleton simulate(const FlowKind& kind, const MetricGraph& g, std::span<const StartPoint> starts,
                  std::uint64_t seed, const SimulationConfig& cfg);

// Shared noise, reconstructed from the seed.
// W_k for k = 0..horizon, with quantized N(0, dt) increments (Tanaka flows).
std::vector<double> common_brownian_path(const CounterRng& noise, const SimulationConfig& cfg);
// Common lattice step xi_k in {-1, +1} and the at-zero move for skew parameter beta.
int lattice_common_step(const CounterRng& noise, std::int64_t k);
int lattice_zero_step(const CounterRng& noise, std::int64_t k, double beta);

// G(x) = eps(x)|x| for the star Tanaka flow: edges [0, l) positive, the rest negative.
double tanaka_star_projection(const MetricGraph& g, int sign_split, const GraphPoint& p);

// Index drawn from weights w (summing to about 1) by inverse transform of u.
int draw_index(std::span<const double> w, double u);

}  // namespace cflow
