#include "cflow/metric_graph.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <unordered_map>

namespace cflow {
namespace {

constexpr double kTransmissionTol = 1e-12;

std::string label_of(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw GraphError("graph labels must be strings or integers");
}

}  // namespace

std::size_t PointHash::operator()(const GraphPoint& p) const noexcept {
  std::size_t h = std::hash<double>{}(p.coord);
  h ^= std::hash<std::int64_t>{}((static_cast<std::int64_t>(p.edge) << 32) ^ p.vertex) +
       0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

MetricGraph::MetricGraph(std::vector<Vertex> vertices, std::vector<Edge> edges, double r_max)
    : vertices_(std::move(vertices)), edges_(std::move(edges)), r_max_(r_max) {
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (edges_[e].label.empty()) edges_[e].label = std::to_string(e);
  }
  for (std::size_t v = 0; v < vertices_.size(); ++v) {
    if (vertices_[v].label.empty()) vertices_[v].label = std::to_string(v);
  }
  validate();
  compute_vertex_distances();
  star_ = vertices_.size() == 1 &&
          std::all_of(edges_.begin(), edges_.end(), [](const Edge& e) { return e.to < 0; });
  line_ = star_ && edges_.size() == 2;
}

void MetricGraph::validate() const {
  if (vertices_.empty()) throw GraphError("graph has no vertices");
  if (edges_.empty()) throw GraphError("graph has no edges");
  if (!(r_max_ > 0)) throw GraphError("r_max must be positive");
  const int nv = static_cast<int>(vertices_.size());
  std::vector<int> degree(vertices_.size(), 0);
  for (const auto& e : edges_) {
    if (e.from < 0 || e.from >= nv) throw GraphError("edge " + e.label + ": bad 'from' vertex");
    if (e.to >= nv) throw GraphError("edge " + e.label + ": bad 'to' vertex");
    if (!(e.length > 0)) throw GraphError("edge " + e.label + ": length must be positive");
    if ((e.to < 0) != std::isinf(e.length)) {
      throw GraphError("edge " + e.label + ": an edge is infinite iff it has no 'to' vertex");
    }
    if (e.to == e.from) throw GraphError("edge " + e.label + ": loops are not supported");
    ++degree[static_cast<std::size_t>(e.from)];
    if (e.to >= 0) ++degree[static_cast<std::size_t>(e.to)];
  }
  for (std::size_t v = 0; v < vertices_.size(); ++v) {
    const auto& vx = vertices_[v];
    if (degree[v] == 0) throw GraphError("vertex " + vx.label + " has no incident edge");
    if (vx.incident.size() != static_cast<std::size_t>(degree[v]) ||
        vx.transmission.size() != vx.incident.size()) {
      throw GraphError("vertex " + vx.label + ": incidence/transmission mismatch");
    }
    double sum = 0;
    for (double p : vx.transmission) {
      if (!(p >= 0)) throw GraphError("vertex " + vx.label + ": negative transmission weight");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kTransmissionTol) {
      std::ostringstream os;
      os << "vertex " << vx.label << ": transmission weights sum to " << sum;
      throw GraphError(os.str());
    }
  }
}

void MetricGraph::compute_vertex_distances() {
  const std::size_t n = vertices_.size();
  vdist_.assign(n * n, kInfinity);
  using Item = std::pair<double, int>;
  for (std::size_t src = 0; src < n; ++src) {
    double* row = &vdist_[src * n];
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    row[src] = 0;
    pq.emplace(0.0, static_cast<int>(src));
    while (!pq.empty()) {
      auto [d, v] = pq.top();
      pq.pop();
      if (d > row[v]) continue;
      for (int e : vertices_[static_cast<std::size_t>(v)].incident) {
        const auto& ed = edges_[static_cast<std::size_t>(e)];
        if (ed.to < 0) continue;
        const int w = ed.from == v ? ed.to : ed.from;
        const double nd = d + ed.length;
        if (nd < row[w]) {
          row[w] = nd;
          pq.emplace(nd, w);
        }
      }
    }
  }
}

MetricGraph MetricGraph::star(const std::vector<double>& transmission, double r_max) {
  if (transmission.empty()) throw GraphError("star graph needs at least one edge");
  Vertex center{"0", {}, transmission};
  std::vector<Edge> edges;
  for (std::size_t j = 0; j < transmission.size(); ++j) {
    edges.push_back(Edge{std::to_string(j), 0, -1, kInfinity});
    center.incident.push_back(static_cast<int>(j));
  }
  return MetricGraph({center}, std::move(edges), r_max);
}

MetricGraph MetricGraph::line(double r_max) { return star({0.5, 0.5}, r_max); }

MetricGraph MetricGraph::from_json(const nlohmann::json& j, double r_max) {
  if (!j.is_object()) throw GraphError("graph JSON must be an object");
  if (!j.contains("vertices") || !j["vertices"].is_array()) throw GraphError("graph JSON: missing 'vertices'");
  if (!j.contains("edges") || !j["edges"].is_array()) throw GraphError("graph JSON: missing 'edges'");
  std::vector<Vertex> vertices;
  std::unordered_map<std::string, int> vindex;
  for (const auto& v : j["vertices"]) {
    const std::string label = label_of(v);
    if (!vindex.emplace(label, static_cast<int>(vertices.size())).second) {
      throw GraphError("duplicate vertex " + label);
    }
    vertices.push_back(Vertex{label, {}, {}});
  }
  auto vertex_of = [&](const nlohmann::json& ref) {
    const auto it = vindex.find(label_of(ref));
    if (it == vindex.end()) throw GraphError("unknown vertex " + label_of(ref));
    return it->second;
  };
  std::vector<Edge> edges;
  std::unordered_map<std::string, int> eindex;
  for (const auto& ej : j["edges"]) {
    if (!ej.is_object() || !ej.contains("id") || !ej.contains("from")) {
      throw GraphError("graph JSON: each edge needs 'id' and 'from'");
    }
    Edge e;
    e.label = label_of(ej["id"]);
    e.from = vertex_of(ej["from"]);
    e.to = (!ej.contains("to") || ej["to"].is_null()) ? -1 : vertex_of(ej["to"]);
    if (!ej.contains("length") || ej["length"].is_null()) {
      e.length = kInfinity;
    } else if (ej["length"].is_number()) {
      e.length = ej["length"].get<double>();
    } else {
      throw GraphError("edge " + e.label + ": length must be a number or null");
    }
    if (!eindex.emplace(e.label, static_cast<int>(edges.size())).second) {
      throw GraphError("duplicate edge " + e.label);
    }
    const int idx = static_cast<int>(edges.size());
    vertices[static_cast<std::size_t>(e.from)].incident.push_back(idx);
    if (e.to >= 0) vertices[static_cast<std::size_t>(e.to)].incident.push_back(idx);
    edges.push_back(std::move(e));
  }
  const nlohmann::json trans = j.value("transmission", nlohmann::json::object());
  for (auto& v : vertices) {
    v.transmission.assign(v.incident.size(), v.incident.empty() ? 0.0 : 1.0 / static_cast<double>(v.incident.size()));
    if (!trans.contains(v.label)) continue;
    const auto& row = trans[v.label];
    if (!row.is_object()) throw GraphError("transmission for vertex " + v.label + " must be an object");
    std::vector<double> w(v.incident.size(), 0.0);
    for (auto it = row.begin(); it != row.end(); ++it) {
      const auto eit = eindex.find(it.key());
      if (eit == eindex.end()) throw GraphError("transmission names unknown edge " + it.key());
      const auto pos = std::find(v.incident.begin(), v.incident.end(), eit->second);
      if (pos == v.incident.end()) {
        throw GraphError("edge " + it.key() + " is not incident to vertex " + v.label);
      }
      if (!it.value().is_number()) throw GraphError("transmission weights must be numbers");
      w[static_cast<std::size_t>(pos - v.incident.begin())] = it.value().get<double>();
    }
    v.transmission = std::move(w);
  }
  return MetricGraph(std::move(vertices), std::move(edges), r_max);
}

nlohmann::json MetricGraph::to_json() const {
  nlohmann::json j;
  j["vertices"] = nlohmann::json::array();
  for (const auto& v : vertices_) j["vertices"].push_back(v.label);
  j["edges"] = nlohmann::json::array();
  for (const auto& e : edges_) {
    nlohmann::json ej{{"id", e.label}, {"from", vertices_[static_cast<std::size_t>(e.from)].label}};
    ej["to"] = e.to < 0 ? nlohmann::json(nullptr) : nlohmann::json(vertices_[static_cast<std::size_t>(e.to)].label);
    ej["length"] = std::isinf(e.length) ? nlohmann::json(nullptr) : nlohmann::json(e.length);
    j["edges"].push_back(std::move(ej));
  }
  nlohmann::json trans = nlohmann::json::object();
  for (const auto& v : vertices_) {
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t i = 0; i < v.incident.size(); ++i) {
      row[edges_[static_cast<std::size_t>(v.incident[i])].label] = v.transmission[i];
    }
    trans[v.label] = std::move(row);
  }
  j["transmission"] = std::move(trans);
  return j;
}

double MetricGraph::cutoff(int e) const { return std::min(edge(e).length, r_max_); }

int MetricGraph::edge_index(const std::string& label) const {
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (edges_[e].label == label) return static_cast<int>(e);
  }
  throw GraphError("unknown edge " + label);
}

GraphPoint MetricGraph::vertex_point(int v) const {
  if (v < 0 || static_cast<std::size_t>(v) >= vertices_.size()) throw GraphError("vertex out of range");
  return GraphPoint{-1, v, 0.0};
}

GraphPoint MetricGraph::point(int e, double r) const {
  if (e < 0 || static_cast<std::size_t>(e) >= edges_.size()) throw GraphError("edge out of range");
  const auto& ed = edges_[static_cast<std::size_t>(e)];
  if (!(r >= 0) || r > ed.length) {
    std::ostringstream os;
    os << "coordinate " << r << " outside edge " << ed.label;
    throw GraphError(os.str());
  }
  if (r == 0) return GraphPoint{-1, ed.from, 0.0};
  if (r == ed.length) return GraphPoint{-1, ed.to, 0.0};
  return GraphPoint{e, -1, r};
}

double MetricGraph::distance(const GraphPoint& a, const GraphPoint& b) const {
  if (a == b) return 0.0;
  struct End {
    int v;
    double d;
  };
  auto ends = [this](const GraphPoint& p, End out[2]) {
    if (p.on_vertex()) {
      out[0] = {p.vertex, 0.0};
      return 1;
    }
    const auto& ed = edges_[static_cast<std::size_t>(p.edge)];
    out[0] = {ed.from, p.coord};
    if (ed.to < 0) return 1;
    out[1] = {ed.to, ed.length - p.coord};
    return 2;
  };
  End ea[2], eb[2];
  const int na = ends(a, ea);
  const int nb = ends(b, eb);
  double best = kInfinity;
  if (!a.on_vertex() && a.edge == b.edge) best = std::abs(a.coord - b.coord);
  const std::size_t n = vertices_.size();
  for (int i = 0; i < na; ++i) {
    for (int k = 0; k < nb; ++k) {
      const double d = ea[i].d + vdist_[static_cast<std::size_t>(ea[i].v) * n + static_cast<std::size_t>(eb[k].v)] + eb[k].d;
      best = std::min(best, d);
    }
  }
  if (std::isinf(best)) throw UnreachableError("points lie in different connected components");
  return best;
}

double MetricGraph::distance_to_other_vertices(const GraphPoint& p) const {
  double best = kInfinity;
  for (std::size_t v = 0; v < vertices_.size(); ++v) {
    if (p.on_vertex() && static_cast<std::size_t>(p.vertex) == v) continue;
    const GraphPoint q{-1, static_cast<int>(v), 0.0};
    try {
      best = std::min(best, distance(p, q));
    } catch (const UnreachableError&) {
    }
  }
  return best;
}

SimpleNeighborhood MetricGraph::simple_neighborhood(const GraphPoint& x, double eps) const {
  if (!(eps > 0)) throw NotSimpleError("neighborhood radius must be positive");
  const double gap = distance_to_other_vertices(x);
  if (!(eps < gap)) {
    std::ostringstream os;
    os << "radius " << eps << " reaches a vertex at distance " << gap;
    throw NotSimpleError(os.str());
  }
  SimpleNeighborhood nb{x, eps, {}};
  if (x.on_vertex()) {
    for (int e : vertices_[static_cast<std::size_t>(x.vertex)].incident) {
      const auto& ed = edges_[static_cast<std::size_t>(e)];
      if (eps >= ed.length) throw NotSimpleError("radius exceeds incident edge length");
      nb.boundary.push_back(point(e, ed.from == x.vertex ? eps : ed.length - eps));
    }
  } else {
    nb.boundary.push_back(point(x.edge, x.coord - eps));
    nb.boundary.push_back(point(x.edge, x.coord + eps));
  }
  return nb;
}

double MetricGraph::radius(const GraphPoint& p) const {
  if (!star_) throw GraphError("radius() requires a star graph");
  return p.on_vertex() ? 0.0 : p.coord;
}

GraphPoint MetricGraph::star_point(int e, double r) const {
  if (!star_) throw GraphError("star_point() requires a star graph");
  if (r <= 0) return GraphPoint{-1, 0, 0.0};
  return point(e, r);
}

GraphPoint MetricGraph::from_signed(double x) const {
  if (!line_) throw GraphError("signed coordinates require the line graph");
  if (x == 0) return GraphPoint{-1, 0, 0.0};
  return x > 0 ? GraphPoint{0, -1, x} : GraphPoint{1, -1, -x};
}

double MetricGraph::to_signed(const GraphPoint& p) const {
  if (!line_) throw GraphError("signed coordinates require the line graph");
  if (p.on_vertex()) return 0.0;
  return p.edge == 0 ? p.coord : -p.coord;
}

Region Region::whole() { return Region{}; }

Region Region::ball(GraphPoint center, double radius) {
  Region r;
  r.kind_ = Kind::kBall;
  r.center_ = center;
  r.radius_ = radius;
  return r;
}

Region Region::signed_interval(double lo, double hi) {
  if (!(lo <= hi)) throw GraphError("interval bounds out of order");
  Region r;
  r.kind_ = Kind::kInterval;
  r.lo_ = lo;
  r.hi_ = hi;
  return r;
}

bool Region::contains(const MetricGraph& g, const GraphPoint& p) const {
  switch (kind_) {
    case Kind::kWhole:
      return true;
    case Kind::kBall:
      return g.distance(center_, p) <= radius_;
    case Kind::kInterval: {
      const double x = g.to_signed(p);
      return x >= lo_ && x <= hi_;
    }
  }
  return false;
}

double Region::measure(const MetricGraph& g) const {
  switch (kind_) {
    case Kind::kWhole:
      return kInfinity;
    case Kind::kInterval:
      return hi_ - lo_;
    case Kind::kBall: {
      double total = 0;
      for (std::size_t e = 0; e < g.edge_count(); ++e) {
        const double len = g.cutoff(static_cast<int>(e));
        constexpr int kCells = 4096;
        const double h = len / kCells;
        int inside = 0;
        for (int i = 0; i < kCells; ++i) {
          const double r = (i + 0.5) * h;
          if (contains(g, g.point(static_cast<int>(e), r))) ++inside;
        }
        total += inside * h;
      }
      return total;
    }
  }
  return 0;
}

std::vector<GraphPoint> Region::sample(const MetricGraph& g, double spacing) const {
  if (!(spacing > 0)) throw GraphError("sample spacing must be positive");
  std::vector<GraphPoint> out;
  switch (kind_) {
    case Kind::kWhole:
      throw GraphError("cannot sample an unbounded region");
    case Kind::kInterval: {
      const auto n = static_cast<long>(std::floor((hi_ - lo_) / spacing + 1e-9));
      for (long i = 0; i <= n; ++i) out.push_back(g.from_signed(lo_ + static_cast<double>(i) * spacing));
      if (lo_ + static_cast<double>(n) * spacing < hi_) out.push_back(g.from_signed(hi_));
      return out;
    }
    case Kind::kBall: {
      for (std::size_t v = 0; v < g.vertex_count(); ++v) {
        const auto p = g.vertex_point(static_cast<int>(v));
        if (contains(g, p)) out.push_back(p);
      }
      for (std::size_t e = 0; e < g.edge_count(); ++e) {
        const double len = g.cutoff(static_cast<int>(e));
        for (double r = spacing; r < len; r += spacing) {
          const auto p = g.point(static_cast<int>(e), r);
          if (contains(g, p)) out.push_back(p);
          else if (g.distance(center_, p) > radius_ + len) break;
        }
      }
      return out;
    }
  }
  return out;
}

GraphPoint Region::random_point(const MetricGraph& g, double u, double v) const {
  switch (kind_) {
    case Kind::kWhole:
      throw GraphError("cannot draw from an unbounded region");
    case Kind::kInterval:
      return g.from_signed(lo_ + u * (hi_ - lo_));
    case Kind::kBall:
      if (g.is_star() && center_.on_vertex()) {
        const auto d = static_cast<int>(g.edge_count());
        const int e = std::min(d - 1, static_cast<int>(v * d));
        return g.star_point(e, u * std::min(radius_, g.cutoff(e)));
      } else {
        const auto pts = sample(g, radius_ / 64);
        return pts.at(std::min(pts.size() - 1, static_cast<std::size_t>(u * static_cast<double>(pts.size()))));
      }
  }
  return {};
}

nlohmann::json Region::to_json() const {
  switch (kind_) {
    case Kind::kWhole:
      return {{"kind", "whole"}};
    case Kind::kBall: {
      nlohmann::json c;
      cflow::to_json(c, center_);
      return {{"kind", "ball"}, {"center", c}, {"radius", radius_}};
    }
    case Kind::kInterval:
      return {{"kind", "interval"}, {"lo", lo_}, {"hi", hi_}};
  }
  return {};
}

Region Region::from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "whole") return whole();
  if (kind == "interval") return signed_interval(j.at("lo").get<double>(), j.at("hi").get<double>());
  if (kind == "ball") {
    const auto& c = j.at("center");
    GraphPoint p{c.at("edge").get<int>(), c.at("vertex").get<int>(), c.at("coord").get<double>()};
    return ball(p, j.at("radius").get<double>());
  }
  throw GraphError("unknown region kind " + kind);
}

void to_json(nlohmann::json& j, const GraphPoint& p) {
  j = nlohmann::json{{"edge", p.edge}, {"vertex", p.vertex}, {"coord", p.coord}};
}

}  // namespace cflow
