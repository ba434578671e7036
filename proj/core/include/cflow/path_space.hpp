#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cflow/metric_graph.hpp"

namespace cflow {

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Uniform time grid t_k = k * dt; the horizon is the last admissible step.
struct TimeGrid {
  double dt = 1e-3;
  std::int64_t horizon_step = 1000;

  double time(std::int64_t k) const noexcept { return static_cast<double>(k) * dt; }
  std::int64_t step(double t) const;  // throws AlignmentError if t is off-grid
  std::int64_t step_floor(double t) const noexcept;
  double horizon() const noexcept { return time(horizon_step); }
};

// A grid-sampled path f on [i(f), T]. Outside its samples the path is held
// constant, which realizes the continuous extension e(f) on the real line.
class Path {
 public:
  Path() = default;
  Path(std::int64_t start_step, double dt, std::vector<GraphPoint> samples);

  std::int64_t start_step() const noexcept { return start_; }
  std::int64_t end_step() const noexcept { return start_ + static_cast<std::int64_t>(samples_.size()) - 1; }
  double dt() const noexcept { return dt_; }
  double start_time() const noexcept { return static_cast<double>(start_) * dt_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  const GraphPoint& at_step(std::int64_t k) const;
  GraphPoint at_time(const MetricGraph& g, double t) const;
  std::span<const GraphPoint> samples() const noexcept { return samples_; }
  std::vector<GraphPoint>& mutable_samples() noexcept { return samples_; }

  friend bool operator==(const Path&, const Path&) = default;

 private:
  std::int64_t start_ = 0;
  double dt_ = 1e-3;
  std::vector<GraphPoint> samples_;
};

struct PathDistance {
  double value = 0.0;
  double truncation_bound = 0.0;  // 2^{-n_max}
};

inline constexpr int kDefaultDistanceTerms = 20;

PathDistance path_distance(const MetricGraph& g, const Path& f, const Path& h,
                           int n_max = kDefaultDistanceTerms);

// f restricted to [t, T]; for t before i(f) the new samples repeat f(i(f)).
Path restrict_path(const Path& f, std::int64_t step);

struct ModulusWitness {
  std::size_t path = 0;
  std::int64_t step_a = 0;
  std::int64_t step_b = 0;
  double distance = 0.0;
};

struct EquicontinuityResult {
  bool ok = false;
  double alpha = 0.0;          // largest admissible time lag found
  double worst_modulus = 0.0;  // largest distance observed at lags <= alpha
  bool sub_grid = false;       // alpha below dt, from the interpolated paths
  std::optional<ModulusWitness> witness;  // a one-step move >= eps when sub_grid
};

// Largest alpha (a multiple of dt) such that every path moves less than eps
// over any pair of grid times in [i(f), C] at most alpha apart. When even one
// step is too coarse, alpha comes from the piecewise-geodesic extension.
EquicontinuityResult equicontinuity_check(const MetricGraph& g, std::span<const Path> family,
                                          double C, double eps);

}  // namespace cflow
