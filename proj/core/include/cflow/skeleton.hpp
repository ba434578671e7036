#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cflow/metric_graph.hpp"
#include "cflow/path_space.hpp"
#include "json.hpp"

namespace cflow {

// Entry `absorbed` joins the class of `into` from `step` onwards.
struct MergeEvent {
  std::size_t absorbed = 0;
  std::size_t into = 0;
  std::int64_t step = 0;
};

// A distinct point occupied at one grid time, with the smallest entry index
// sitting there and the number of entries sharing it.
struct Occupant {
  GraphPoint point;
  std::uint32_t min_index = 0;
  std::uint32_t count = 0;
};

// Time and space window of the sampled region.
struct SkeletonWindow {
  double t_min = 0.0;
  double t_max = 0.5;
  Region box = Region::signed_interval(-0.5, 0.5);
};

// Frozen finite skeleton: paths indexed by n, sorted by start step, all
// sampled on one grid up to the horizon. Immutable after construction.
class Skeleton {
 public:
  Skeleton(MetricGraph graph, TimeGrid grid, std::vector<Path> paths, std::vector<MergeEvent> merges,
           double space_step, SkeletonWindow window, nlohmann::json metadata = nlohmann::json::object());

  const MetricGraph& graph() const noexcept { return graph_; }
  const TimeGrid& grid() const noexcept { return grid_; }
  double dt() const noexcept { return grid_.dt; }
  std::int64_t horizon_step() const noexcept { return grid_.horizon_step; }
  double space_step() const noexcept { return space_step_; }
  const SkeletonWindow& window() const noexcept { return window_; }
  const nlohmann::json& metadata() const noexcept { return metadata_; }

  std::size_t size() const noexcept { return paths_.size(); }
  const Path& path(std::size_t n) const { return paths_.at(n); }
  std::span<const Path> paths() const noexcept { return paths_; }
  std::int64_t start_step(std::size_t n) const { return paths_.at(n).start_step(); }
  const GraphPoint& start_point(std::size_t n) const { return paths_.at(n).samples().front(); }
  const GraphPoint& point(std::size_t n, std::int64_t step) const { return paths_[n].at_step(step); }

  // |I^s|: entries are sorted by start, so I^s is the prefix [0, active_count).
  std::size_t active_count(std::int64_t step) const;
  // Distinct points of I^s at this step, sorted by PointLess.
  std::span<const Occupant> occupants(std::int64_t step) const;
  std::span<const MergeEvent> merges() const noexcept { return merges_; }

  // Smallest index of the coalescence class of n at the given step.
  std::size_t class_min(std::size_t n, std::int64_t step) const;

 private:
  MetricGraph graph_;
  TimeGrid grid_;
  std::vector<Path> paths_;
  std::vector<MergeEvent> merges_;
  double space_step_;
  SkeletonWindow window_;
  nlohmann::json metadata_;
  std::int64_t first_step_ = 0;
  std::vector<std::size_t> occ_offset_;
  std::vector<Occupant> occ_;
  std::vector<std::size_t> parent_;
  std::vector<std::int64_t> parent_step_;
};

struct AxiomParams {
  double eta = 0.05;
  std::vector<double> eps_ladder{0.5, 0.25, 0.125};
  double eval_spacing = 0.0;  // 0 selects eta / 4
};

struct Sk1Result {
  bool pass = true;
  std::size_t m = 0, n = 0;  // witness pair sharing a point at `step` but not after
  std::int64_t step = 0;
};

struct Sk2Result {
  bool pass = true;
  double covering_radius = 0.0;
  double worst_t = 0.0;
  GraphPoint worst_point{};
};

struct Sk3Result {
  double eps = 0.0;
  EquicontinuityResult check;
};

struct AxiomReport {
  Sk1Result sk1;
  Sk2Result sk2;
  std::vector<Sk3Result> sk3;
  bool pass() const;
  nlohmann::json to_json() const;
};

AxiomReport check_axioms(const Skeleton& sk, const AxiomParams& params = {});

// Number of distinct values phi_n(t) over n in I^s whose paths stay in K on [s, t].
std::size_t count_distinct(const Skeleton& sk, std::int64_t s, std::int64_t t, const Region& K);

struct IcpResult {
  bool pass = true;
  std::size_t compact = 0;
  std::size_t entries = 0;
  std::size_t distinct = 0;
  double cap = 0.0;
};

IcpResult icp_check(const Skeleton& sk, std::int64_t s, std::int64_t t, std::span<const Region> compacts,
                    double cap_per_unit_length);

}  // namespace cflow

namespace cflow {

struct BifurcationSample {
  std::int64_t s = 0;
  GraphPoint x{};
  double eps_used = 0.0;
  bool widened = false;  // no ladder radius captured two distinct occupants
  std::size_t captured_paths = 0;
  std::vector<std::pair<std::int64_t, std::size_t>> nu;  // (t step, cluster count)
  std::optional<std::int64_t> tau;
  bool flagged = false;
};

struct BifurcationReport {
  std::vector<BifurcationSample> samples;
  std::vector<std::size_t> flagged;  // indices into samples
  double cluster_tol = 0.0;          // tolerance actually used
  nlohmann::json to_json(const MetricGraph& g) const;
};

struct BifurcationParams {
  std::vector<double> eps_ladder{0.1, 0.05, 0.025, 0.0125, 0.00625};
  // Pairs join a cluster while their distance exceeds its value at s by at
  // most cluster_tol; 0 selects 5 sqrt(dt), above one-step noise.
  double cluster_tol = 0.0;
  std::vector<std::int64_t> t_offsets;  // empty selects 1, 2, 4, ... up to the horizon
};

BifurcationReport detect_bifurcations(const Skeleton& sk,
                                      std::span<const std::pair<std::int64_t, GraphPoint>> samples,
                                      const BifurcationParams& params = {});

// Covering radius of `box` by the positions at step s of entries started in (s - delta, s].
double recent_start_net_radius(const Skeleton& sk, std::int64_t s, std::int64_t delta_steps,
                               const Region& box, double spacing);

}  // namespace cflow
