#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace cflow {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();
inline constexpr double kDefaultRMax = 1e3;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnreachableError : public GraphError {
 public:
  using GraphError::GraphError;
};

class NotSimpleError : public GraphError {
 public:
  using GraphError::GraphError;
};

// A point of the metric graph in canonical form: either a vertex
// (vertex >= 0, edge == -1, coord == 0) or an interior point of an edge
// (edge >= 0, vertex == -1, 0 < coord < length).
struct GraphPoint {
  std::int32_t edge = -1;
  std::int32_t vertex = -1;
  double coord = 0.0;

  bool on_vertex() const noexcept { return vertex >= 0; }
  friend bool operator==(const GraphPoint&, const GraphPoint&) = default;
};

struct PointLess {
  bool operator()(const GraphPoint& a, const GraphPoint& b) const noexcept {
    if (a.vertex != b.vertex) return a.vertex < b.vertex;
    if (a.edge != b.edge) return a.edge < b.edge;
    return a.coord < b.coord;
  }
};

struct PointHash {
  std::size_t operator()(const GraphPoint& p) const noexcept;
};

struct Edge {
  std::string label;
  int from = -1;
  int to = -1;  // -1 for an infinite edge
  double length = kInfinity;
};

struct Vertex {
  std::string label;
  std::vector<int> incident;        // edge indices
  std::vector<double> transmission;  // aligned with incident
};

struct SimpleNeighborhood {
  GraphPoint center;
  double radius = 0.0;
  std::vector<GraphPoint> boundary;  // one cut point per branch
};

class MetricGraph {
 public:
  MetricGraph() = default;
  MetricGraph(std::vector<Vertex> vertices, std::vector<Edge> edges, double r_max = kDefaultRMax);

  // Star graph with one vertex and one infinite edge per weight.
  static MetricGraph star(const std::vector<double>& transmission, double r_max = kDefaultRMax);
  // The real line as a two-ray star: edge 0 is [0, inf), edge 1 is (-inf, 0].
  static MetricGraph line(double r_max = kDefaultRMax);

  static MetricGraph from_json(const nlohmann::json& j, double r_max = kDefaultRMax);
  nlohmann::json to_json() const;

  std::size_t vertex_count() const noexcept { return vertices_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  const Vertex& vertex(int v) const { return vertices_.at(static_cast<std::size_t>(v)); }
  const Edge& edge(int e) const { return edges_.at(static_cast<std::size_t>(e)); }
  double r_max() const noexcept { return r_max_; }
  double cutoff(int e) const;  // min(length, r_max)

  GraphPoint vertex_point(int v) const;
  // Canonicalizes (edge, r); throws GraphError if r is outside [0, length].
  GraphPoint point(int e, double r) const;

  double distance(const GraphPoint& a, const GraphPoint& b) const;
  // Distance from p to the nearest vertex other than p itself.
  double distance_to_other_vertices(const GraphPoint& p) const;
  SimpleNeighborhood simple_neighborhood(const GraphPoint& x, double eps) const;

  bool is_star() const noexcept { return star_; }
  bool is_line() const noexcept { return line_; }
  // Distance to the center of a star graph.
  double radius(const GraphPoint& p) const;
  GraphPoint star_point(int e, double r) const;
  GraphPoint from_signed(double x) const;  // line graphs only
  double to_signed(const GraphPoint& p) const;

  // Edge label used in files; falls back to the index.
  const std::string& edge_label(int e) const { return edges_.at(static_cast<std::size_t>(e)).label; }
  int edge_index(const std::string& label) const;

 private:
  void validate() const;
  void compute_vertex_distances();

  std::vector<Vertex> vertices_;
  std::vector<Edge> edges_;
  std::vector<double> vdist_;  // all-pairs vertex distances, row-major
  double r_max_ = kDefaultRMax;
  bool star_ = false;
  bool line_ = false;
};

// A compact region used for windows and box constraints.
class Region {
 public:
  static Region whole();
  static Region ball(GraphPoint center, double radius);
  static Region signed_interval(double lo, double hi);  // line graphs only

  bool contains(const MetricGraph& g, const GraphPoint& p) const;
  double measure(const MetricGraph& g) const;
  std::vector<GraphPoint> sample(const MetricGraph& g, double spacing) const;
  // Point drawn from two uniforms: uniform along an interval, or edge by v and
  // radius by u for a ball centred at a star vertex.
  GraphPoint random_point(const MetricGraph& g, double u, double v) const;

  nlohmann::json to_json() const;
  static Region from_json(const nlohmann::json& j);

 private:
  enum class Kind { kWhole, kBall, kInterval };
  Kind kind_ = Kind::kWhole;
  GraphPoint center_{};
  double radius_ = kInfinity;
  double lo_ = -kInfinity;
  double hi_ = kInfinity;
};

void to_json(nlohmann::json& j, const GraphPoint& p);

}  // namespace cflow
