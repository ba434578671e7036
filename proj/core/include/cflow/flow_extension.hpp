#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cflow/metric_graph.hpp"
#include "cflow/noise.hpp"
#include "cflow/path_space.hpp"
#include "cflow/skeleton.hpp"
#include "json.hpp"

namespace cflow {

inline constexpr std::int64_t kNever = std::numeric_limits<std::int64_t>::max();

class DensityViolation : public std::runtime_error {
 public:
  DensityViolation(const std::string& what, double gap) : std::runtime_error(what), gap_(gap) {}
  double gap() const noexcept { return gap_; }

 private:
  double gap_;
};

// eps_k = max(2^-k, floor). With floor equal to one space-grid step and the
// strict comparison in the index search, the floor ball only admits points
// that coincide with x up to grid resolution.
struct EpsilonSchedule {
  double floor = kSpaceQuantum;

  double operator()(int k) const noexcept;
  // Smallest k at which the schedule reaches its floor.
  int floor_index() const noexcept;
};

struct SelectorParams {
  int window = 5;
  double cluster_radius = 0.0;  // 0: twice the last nonempty eps (FlowMap) or 1e-3 (paths)
};

// Deterministic limit-point selector over an abstract finite sequence.
// `same(i, j)` tests equality, `dist(i, j)` is the clustering metric.
// Returns the chosen position in the sequence.
std::size_t select_limit_index(std::size_t len, const std::function<bool(std::size_t, std::size_t)>& same,
                               const std::function<double(std::size_t, std::size_t)>& dist, int window,
                               double radius);

// Selector on explicit paths; returns the chosen position.
std::size_t select_limit_point(const MetricGraph& g, std::span<const Path> seq, const SelectorParams& params = {});

struct Selection {
  std::size_t entry = 0;     // skeleton index whose tail theta follows
  int stabilized_at = -1;    // first k of the stabilization window, -1 if clustered
  std::size_t sequence_length = 0;
};

// theta_{s,t}(x) built from a frozen skeleton.
class FlowMap {
 public:
  explicit FlowMap(std::shared_ptr<const Skeleton> sk, std::optional<EpsilonSchedule> schedule = std::nullopt,
                   SelectorParams params = {});

  const Skeleton& skeleton() const noexcept { return *sk_; }
  std::shared_ptr<const Skeleton> skeleton_ptr() const noexcept { return sk_; }
  const EpsilonSchedule& schedule() const noexcept { return schedule_; }

  // n_k for k = 1, 2, ... until the floor is held for `window` terms or the ball empties.
  std::vector<std::size_t> approximating_indices(std::int64_t s, const GraphPoint& x) const;
  Selection select(std::int64_t s, const GraphPoint& x) const;
  GraphPoint value(std::int64_t s, std::int64_t t, const GraphPoint& x) const;
  Path trajectory(std::int64_t s, const GraphPoint& x) const;

 private:
  struct Key {
    std::int64_t s;
    GraphPoint x;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return PointHash{}(k.x) ^ (std::hash<std::int64_t>{}(k.s) * 0x9e3779b97f4a7c15ull);
    }
  };

  Selection compute(std::int64_t s, const GraphPoint& x) const;

  std::shared_ptr<const Skeleton> sk_;
  EpsilonSchedule schedule_;
  SelectorParams params_;
  mutable std::shared_mutex mu_;
  mutable std::unordered_map<Key, Selection, KeyHash> memo_;
};

// Closed set F of (time, point) pairs: tolerance-thickened level sets.
class ClosedShell {
 public:
  static ClosedShell none();
  // The vertex level {(t, y): rho(y, vertex) <= tol}; regular for the
  // reflected and skew motions, so a path started on it re-enters at once.
  static ClosedShell zero_level(double tol = 0.0);
  static ClosedShell levels(std::vector<GraphPoint> centers, double tol, bool regular);
  // "none", "zero-level" or "custom:<file>" (JSON {"levels":[...],"tolerance":..,"regular":..}).
  static ClosedShell parse(const std::string& spec, const MetricGraph& g);
  static ClosedShell from_json(const nlohmann::json& j, const MetricGraph& g);

  bool empty() const noexcept { return kind_ == Kind::kNone; }
  bool regular() const noexcept { return regular_; }
  bool contains(const MetricGraph& g, std::int64_t step, const GraphPoint& y) const;
  // Distance from y to the shell at this step; infinite for the empty shell.
  double distance(const MetricGraph& g, std::int64_t step, const GraphPoint& y) const;
  std::string describe() const;

 private:
  enum class Kind { kNone, kVertex, kLevels };
  Kind kind_ = Kind::kNone;
  std::vector<GraphPoint> centers_;
  double tol_ = 0.0;
  bool regular_ = false;
};

struct RepairTrace {
  std::int64_t s = 0;
  GraphPoint x{};
  std::vector<std::int64_t> sigma;  // kNever encodes infinity
  std::vector<GraphPoint> z;
  int k = 0;
  bool capped = false;

  nlohmann::json to_json(const Skeleton& sk) const;
};

// psi_{s,t}(x): theta repaired along the sigma/z recursion against a shell.
class RepairedFlow {
 public:
  RepairedFlow(const FlowMap& theta, ClosedShell shell, int k_cap = 16);

  const FlowMap& theta() const noexcept { return theta_; }
  const ClosedShell& shell() const noexcept { return shell_; }
  RepairTrace trace(std::int64_t s, const GraphPoint& x) const;
  GraphPoint value(std::int64_t s, std::int64_t t, const GraphPoint& x) const;
  Path trajectory(std::int64_t s, const GraphPoint& x) const;

 private:
  const FlowMap& theta_;
  ClosedShell shell_;
  int k_cap_;
};

using FlowProvider = std::function<GraphPoint(std::int64_t s, std::int64_t t, const GraphPoint& x)>;

struct FlowQuery {
  std::int64_t s = 0, t = 0, u = 0;
  GraphPoint x{};
};

struct FlowViolation {
  FlowQuery query;
  double residual = 0.0;
};

struct StrongFlowReport {
  std::size_t evaluated = 0;
  double max_residual = 0.0;
  std::vector<FlowViolation> violations;
};

StrongFlowReport verify_strong_flow(const MetricGraph& g, const FlowProvider& psi, std::span<const FlowQuery> queries,
                                    int threads = 1);
StrongFlowReport verify_strong_flow(const MetricGraph& g, const FlowProvider& psi,
                                    std::span<const std::array<std::int64_t, 3>> triples,
                                    std::span<const GraphPoint> points, int threads = 1);

// Random (s <= t <= u, x) on the skeleton window; x quantized to the space quantum.
std::vector<FlowQuery> sample_flow_queries(const Skeleton& sk, std::size_t count, std::uint64_t seed);

using StoppingRule = std::function<std::optional<std::int64_t>(const Path&)>;

// First grid time at which the path touches or crosses the given signed level (line graphs)
// or reaches the vertex (star graphs).
StoppingRule first_hit_of_level(const MetricGraph& g, double level = 0.0);

// sup over [sigma, T] of rho(theta_{sigma,.}(theta_{s,sigma}(x)), theta_{s,.}(x));
// nullopt when the rule never stops inside the horizon.
std::optional<double> stopping_time_consistency(const FlowMap& flow, std::int64_t s, const GraphPoint& x,
                                                const StoppingRule& rule);

// Flagged bifurcation points farther than the detector's cluster tolerance
// from the shell; flags are only located up to that tolerance.
std::vector<std::size_t> uncovered_bifurcations(const Skeleton& sk, const ClosedShell& shell,
                                                const BifurcationReport& report);

}  // namespace cflow
