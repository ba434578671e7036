#pragma once

// Small hand-rolled generators for property tests.

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "cflow/metric_graph.hpp"

namespace cflow::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin() { return integer(0, 1) == 1; }
  std::mt19937_64& engine() { return rng_; }

  std::vector<double> weights(int d) {
    std::vector<double> w(static_cast<std::size_t>(d));
    double sum = 0;
    for (auto& x : w) sum += (x = uniform(0.05, 1.0));
    for (auto& x : w) x /= sum;
    return w;
  }

  // Connected graph with finite edges: a random tree plus a few chords,
  // optionally with infinite rays hanging off random vertices. A single
  // vertex always gets at least one ray.
  MetricGraph graph(int nv, int chords, int rays) {
    if (nv == 1) rays = std::max(rays, 1);
    std::vector<Edge> edges;
    for (int v = 1; v < nv; ++v) edges.push_back(Edge{"", integer(0, v - 1), v, uniform(0.2, 3.0)});
    for (int c = 0; c < chords; ++c) {
      const int a = integer(0, nv - 1);
      int b = integer(0, nv - 1);
      if (a == b) b = (a + 1) % nv;
      if (a == b) continue;
      edges.push_back(Edge{"", a, b, uniform(0.2, 3.0)});
    }
    for (int r = 0; r < rays; ++r) edges.push_back(Edge{"", integer(0, nv - 1), -1, kInfinity});
    std::vector<Vertex> vertices(static_cast<std::size_t>(nv));
    for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
      vertices[static_cast<std::size_t>(edges[static_cast<std::size_t>(e)].from)].incident.push_back(e);
      if (edges[static_cast<std::size_t>(e)].to >= 0) {
        vertices[static_cast<std::size_t>(edges[static_cast<std::size_t>(e)].to)].incident.push_back(e);
      }
    }
    for (auto& v : vertices) v.transmission = weights(static_cast<int>(v.incident.size()));
    return MetricGraph(std::move(vertices), std::move(edges), 50.0);
  }

  GraphPoint point(const MetricGraph& g) {
    const int e = integer(0, static_cast<int>(g.edge_count()) - 1);
    const double len = g.cutoff(e);
    if (integer(0, 9) == 0) return g.point(e, 0.0);
    return g.point(e, uniform(0.0, len));
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace cflow::testing
