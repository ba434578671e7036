#include "cflow/sde_flows.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace cflow {

// ---------------------------------------------------------------- FlowKind

void FlowKind::validate() const {
  auto check_p = [&] {
    if (transmission.empty()) throw ParameterError("transmission weights required");
    double s = 0;
    for (double p : transmission) {
      if (!(p >= 0)) throw ParameterError("transmission weights must be non-negative");
      s += p;
    }
    if (std::abs(s - 1) > 1e-9) throw ParameterError("transmission weights must sum to 1");
  };
  switch (type) {
    case FlowType::kCoalescingBM:
    case FlowType::kTanakaLine:
      break;
    case FlowType::kWalshStar:
      check_p();
      break;
    case FlowType::kSkewBM:
      if (!(beta >= -1 && beta <= 1)) throw ParameterError("skew parameter beta must lie in [-1, 1]");
      break;
    case FlowType::kTanakaStar:
      check_p();
      if (transmission.size() < 2) throw ParameterError("star Tanaka flow needs at least two edges");
      if (sign_split < 1 || sign_split > static_cast<int>(transmission.size()) - 1) {
        throw ParameterError("sign split l must satisfy 1 <= l <= d - 1");
      }
      break;
  }
}

double FlowKind::star_beta() const {
  double pos = 0;
  for (int j = 0; j < sign_split; ++j) pos += transmission[static_cast<std::size_t>(j)];
  return 2 * pos - 1;
}

MetricGraph FlowKind::graph(double r_max) const {
  return on_star() ? MetricGraph::star(transmission, r_max) : MetricGraph::line(r_max);
}

std::string FlowKind::name() const {
  switch (type) {
    case FlowType::kCoalescingBM: return "coalescing-bm";
    case FlowType::kWalshStar: return "walsh";
    case FlowType::kTanakaLine: return "tanaka";
    case FlowType::kSkewBM: return "skew";
    case FlowType::kTanakaStar: return "tanaka-star";
  }
  return "?";
}

FlowType FlowKind::parse_type(const std::string& s) {
  if (s == "coalescing-bm" || s == "cbm") return FlowType::kCoalescingBM;
  if (s == "walsh") return FlowType::kWalshStar;
  if (s == "tanaka") return FlowType::kTanakaLine;
  if (s == "skew") return FlowType::kSkewBM;
  if (s == "tanaka-star") return FlowType::kTanakaStar;
  throw ParameterError("unknown flow kind '" + s + "'");
}

nlohmann::json FlowKind::to_json() const {
  nlohmann::json j{{"kind", name()}};
  if (on_star()) j["transmission"] = transmission;
  if (type == FlowType::kSkewBM) j["beta"] = beta;
  if (type == FlowType::kTanakaStar) j["sign_split"] = sign_split;
  return j;
}

FlowKind FlowKind::from_json(const nlohmann::json& j) {
  FlowKind k;
  k.type = parse_type(j.at("kind").get<std::string>());
  if (j.contains("transmission")) k.transmission = j["transmission"].get<std::vector<double>>();
  if (k.on_star() && k.transmission.empty()) k.transmission = {0.5, 0.5};
  k.beta = j.value("beta", 0.0);
  k.sign_split = j.value("sign_split", 1);
  k.validate();
  return k;
}

// ------------------------------------------------------- SimulationConfig

TimeGrid SimulationConfig::grid() const {
  return TimeGrid{dt, static_cast<std::int64_t>(std::llround(horizon / dt))};
}

SkeletonWindow SimulationConfig::window(const MetricGraph& g) const {
  SkeletonWindow w;
  w.t_min = t_min;
  w.t_max = t_max;
  w.box = g.is_line() ? Region::signed_interval(box_lo, box_hi) : Region::ball(g.vertex_point(0), box_hi);
  return w;
}

void SimulationConfig::validate() const {
  if (!(dt > 0)) throw ParameterError("dt must be positive");
  if (!(horizon > 0)) throw ParameterError("horizon must be positive");
  if (std::abs(std::llround(horizon / dt) * dt - horizon) > 1e-9 * horizon) {
    throw ParameterError("horizon must be a multiple of dt");
  }
  if (!(t_min >= 0 && t_min <= t_max && t_max <= horizon)) throw ParameterError("window must satisfy 0 <= t_min <= t_max <= horizon");
  if (!(box_lo <= box_hi)) throw ParameterError("box bounds out of order");
  if (!(start_spacing > 0) || !(start_time_spacing > 0)) throw ParameterError("start spacings must be positive");
  if (!(quantum > 0)) throw ParameterError("quantum must be positive");
  if (snap < 0) throw ParameterError("snap tolerance must be non-negative");
  if (snap > 0 && snap < quantum) throw ParameterError("snap tolerance must be at least the space-grid step");
  if (!(r_max > 0)) throw ParameterError("r_max must be positive");
}

nlohmann::json SimulationConfig::to_json() const {
  return {{"dt", dt},       {"horizon", horizon}, {"t_min", t_min},     {"t_max", t_max},
          {"box_lo", box_lo}, {"box_hi", box_hi}, {"start_spacing", start_spacing},
          {"start_time_spacing", start_time_spacing},
          {"snap", snap_tolerance()}, {"quantum", quantum}, {"r_max", r_max}};
}

SimulationConfig SimulationConfig::from_json(const nlohmann::json& j) {
  SimulationConfig c;
  c.dt = j.value("dt", c.dt);
  c.horizon = j.value("horizon", c.horizon);
  c.t_min = j.value("t_min", c.t_min);
  c.t_max = j.value("t_max", c.t_max);
  c.box_lo = j.value("box_lo", c.box_lo);
  c.box_hi = j.value("box_hi", c.box_hi);
  c.start_spacing = j.value("start_spacing", c.start_spacing);
  c.start_time_spacing = j.value("start_time_spacing", c.start_time_spacing);
  c.snap = j.value("snap", c.snap);
  c.quantum = j.value("quantum", c.quantum);
  c.r_max = j.value("r_max", c.r_max);
  c.validate();
  return c;
}

// ------------------------------------------------------------------ noise

double lattice_step(double dt, double quantum) {
  const double h = quantize(std::sqrt(dt), quantum);
  if (!(h > 0)) throw ParameterError("dt too small for the space quantum");
  return h;
}

std::vector<double> common_brownian_path(const CounterRng& noise, const SimulationConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.grid().horizon_step);
  const double sd = std::sqrt(cfg.dt);
  std::vector<double> w(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    w[k + 1] = w[k] + quantize(sd * noise.normal(StreamTag::kCommonIncrement, 0, k), cfg.quantum);
  }
  return w;
}

int lattice_common_step(const CounterRng& noise, std::int64_t k) {
  return noise.uniform(StreamTag::kCommonIncrement, 1, static_cast<std::uint64_t>(k)) < 0.5 ? 1 : -1;
}

int lattice_zero_step(const CounterRng& noise, std::int64_t k, double beta) {
  return noise.uniform(StreamTag::kZeroDecision, 0, static_cast<std::uint64_t>(k)) < (1 + beta) / 2 ? 1 : -1;
}

int draw_index(std::span<const double> w, double u) {
  double acc = 0;
  int last = -1;
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (w[j] <= 0) continue;
    last = static_cast<int>(j);
    acc += w[j];
    if (u < acc) return last;
  }
  if (last < 0) throw ParameterError("no positive weight to draw from");
  return last;
}

double tanaka_star_projection(const MetricGraph& g, int sign_split, const GraphPoint& p) {
  if (p.on_vertex()) return 0.0;
  return p.edge < sign_split ? g.radius(p) : -g.radius(p);
}

// ------------------------------------------------------------ start nets

std::vector<StartPoint> net_starts(const FlowKind& kind, const MetricGraph& g, const SimulationConfig& cfg) {
  cfg.validate();
  kind.validate();
  const TimeGrid grid = cfg.grid();
  std::vector<std::int64_t> steps;
  const auto nt = static_cast<long>(std::floor((cfg.t_max - cfg.t_min) / cfg.start_time_spacing + 1e-9));
  for (long i = 0; i <= nt; ++i) {
    steps.push_back(std::llround((cfg.t_min + static_cast<double>(i) * cfg.start_time_spacing) / cfg.dt));
  }
  std::vector<std::pair<int, double>> places;  // (edge or -1 for the line, coordinate)
  if (g.is_line() && !kind.on_star()) {
    const auto nx = static_cast<long>(std::floor((cfg.box_hi - cfg.box_lo) / cfg.start_spacing + 1e-9));
    for (long i = 0; i <= nx; ++i) places.emplace_back(-1, cfg.box_lo + static_cast<double>(i) * cfg.start_spacing);
  } else {
    places.emplace_back(0, 0.0);
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      for (long i = 1; static_cast<double>(i) * cfg.start_spacing <= cfg.box_hi + 1e-12; ++i) {
        places.emplace_back(static_cast<int>(e), static_cast<double>(i) * cfg.start_spacing);
      }
    }
  }
  const double h = kind.lattice() ? lattice_step(cfg.dt, cfg.quantum) : 0.0;
  std::vector<StartPoint> out;
  for (auto k : steps) {
    for (const auto& [e, c] : places) {
      StartPoint sp{k, {}};
      if (!kind.lattice()) {
        const double x = quantize(c, cfg.quantum);
        sp.point = e < 0 ? g.from_signed(x) : g.star_point(e, std::abs(x));
      } else {
        auto site = std::llround(c / h);
        if (((site - k) % 2 + 2) % 2 != 0) {
          if (k + 1 <= grid.horizon_step) ++sp.step;
          else site += (c / h >= static_cast<double>(site)) ? 1 : -1;
        }
        const double x = static_cast<double>(site) * h;
        sp.point = e < 0 ? g.from_signed(x) : g.star_point(e, std::abs(x));
      }
      out.push_back(sp);
    }
  }
  std::sort(out.begin(), out.end(), [](const StartPoint& a, const StartPoint& b) {
    if (a.step != b.step) return a.step < b.step;
    return PointLess{}(a.point, b.point);
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const StartPoint& a, const StartPoint& b) { return a.step == b.step && a.point == b.point; }),
            out.end());
  return out;
}

// ---------------------------------------------------------- class tracker

namespace {

// Tracks entries, their coalescence classes and sampled paths while a flow
// is advanced step by step. The class representative is the smallest index.
class FlowBuilder {
 public:
  FlowBuilder(std::span<const StartPoint> starts, const TimeGrid& grid) : grid_(grid) {
    for (std::size_t n = 0; n < starts.size(); ++n) {
      if (n > 0) {
        const auto& a = starts[n - 1];
        const auto& b = starts[n];
        if (b.step < a.step || (b.step == a.step && PointLess{}(b.point, a.point))) {
          throw ParameterError("start points must be sorted by (step, point)");
        }
      }
      if (starts[n].step < 0 || starts[n].step > grid.horizon_step) throw ParameterError("start outside the time grid");
    }
    starts_.assign(starts.begin(), starts.end());
    parent_.resize(starts_.size());
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
    current_.resize(starts_.size());
    samples_.resize(starts_.size());
    for (std::size_t n = 0; n < starts_.size(); ++n) {
      samples_[n].reserve(static_cast<std::size_t>(grid.horizon_step - starts_[n].step + 1));
    }
  }

  std::int64_t first_step() const { return starts_.empty() ? 0 : starts_.front().step; }

  // Entries starting at step k, in index order.
  std::pair<std::size_t, std::size_t> starting(std::int64_t k) {
    const std::size_t lo = next_;
    while (next_ < starts_.size() && starts_[next_].step == k) ++next_;
    return {lo, next_};
  }
  const StartPoint& start(std::size_t n) const { return starts_[n]; }

  std::size_t find(std::size_t n) {
    while (parent_[n] != n) n = parent_[n] = parent_[parent_[n]];
    return n;
  }

  // Class of `absorbed` (a representative) joins the class of `into`.
  void join(std::size_t absorbed, std::size_t into, std::int64_t step) {
    if (into > absorbed) std::swap(into, absorbed);
    parent_[absorbed] = into;
    merges_.push_back(MergeEvent{absorbed, into, step});
  }

  void set_point(std::size_t rep, const GraphPoint& p) { current_[rep] = p; }

  void record() {
    for (std::size_t n = 0; n < next_; ++n) samples_[n].push_back(current_[find(n)]);
  }

  Skeleton finish(const MetricGraph& g, const SimulationConfig& cfg, double space_step, nlohmann::json meta) {
    std::vector<Path> paths;
    paths.reserve(starts_.size());
    for (std::size_t n = 0; n < starts_.size(); ++n) {
      paths.emplace_back(starts_[n].step, grid_.dt, std::move(samples_[n]));
    }
    meta["config"] = cfg.to_json();
    meta["space_step"] = space_step;
    meta["entries"] = starts_.size();
    meta["merge_events"] = merges_.size();
    return Skeleton(g, grid_, std::move(paths), std::move(merges_), space_step, cfg.window(g), std::move(meta));
  }

 private:
  TimeGrid grid_;
  std::vector<StartPoint> starts_;
  std::vector<std::size_t> parent_;
  std::vector<GraphPoint> current_;
  std::vector<std::vector<GraphPoint>> samples_;
  std::vector<MergeEvent> merges_;
  std::size_t next_ = 0;
};

// Small disjoint-set over particle slots for one step's merge resolution.
struct SlotUnion {
  std::vector<std::size_t> p;
  explicit SlotUnion(std::size_t n) : p(n) { std::iota(p.begin(), p.end(), std::size_t{0}); }
  std::size_t find(std::size_t i) {
    while (p[i] != i) i = p[i] = p[p[i]];
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) p[std::max(a, b)] = std::min(a, b);
  }
};

// Marks runs of a one-dimensional particle system that crossed or came
// within `snap` during one step. `order` sorts particles by old coordinate.
void unite_crossing_runs(const std::vector<std::size_t>& order, const std::vector<double>& next, double snap,
                         SlotUnion& uf) {
  const std::size_t m = order.size();
  if (m < 2) return;
  std::vector<double> prefmax(m), sufmin(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double v = next[order[i]];
    prefmax[i] = i == 0 ? v : std::max(prefmax[i - 1], v);
  }
  for (std::size_t i = m; i-- > 0;) {
    const double v = next[order[i]];
    sufmin[i] = i + 1 == m ? v : std::min(sufmin[i + 1], v);
  }
  for (std::size_t i = 0; i + 1 < m; ++i) {
    if (sufmin[i + 1] - prefmax[i] < snap) uf.unite(order[i], order[i + 1]);
  }
}

// Collapses merged slots onto their smallest representative, logging merges.
// Returns the surviving slot for every slot.
template <class Particle>
void collapse(std::vector<Particle>& parts, SlotUnion& uf, FlowBuilder& fb, std::int64_t step) {
  const std::size_t m = parts.size();
  std::vector<std::size_t> best(m, SIZE_MAX);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t r = uf.find(i);
    if (best[r] == SIZE_MAX || parts[i].rep < parts[best[r]].rep) best[r] = i;
  }
  std::vector<Particle> kept;
  kept.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t w = best[uf.find(i)];
    if (w == i) kept.push_back(parts[i]);
    else fb.join(parts[i].rep, parts[w].rep, step);
  }
  parts = std::move(kept);
}

void require_star(const MetricGraph& g) {
  if (!g.is_star()) throw ParameterError("flow requires a star graph");
}

nlohmann::json base_meta(const FlowKind& kind, const MetricGraph& g, const CounterRng& noise) {
  return {{"flow", kind.to_json()}, {"graph", g.to_json()}, {"seed", noise.seed()}};
}

double clamp_radius(double r, double r_max) { return std::min(r, r_max); }

}  // namespace

// --------------------------------------------------------- coalescing BM

Skeleton simulate_coalescing_bm(std::span<const StartPoint> starts, const CounterRng& noise,
                                const SimulationConfig& cfg) {
  cfg.validate();
  const MetricGraph g = MetricGraph::line(cfg.r_max);
  const TimeGrid grid = cfg.grid();
  FlowBuilder fb(starts, grid);
  struct P {
    std::size_t rep;
    double x;
  };
  std::vector<P> parts;
  const double sd = std::sqrt(cfg.dt);
  const double snap = cfg.snap_tolerance();
  for (std::int64_t k = fb.first_step();; ++k) {
    const auto [lo, hi] = fb.starting(k);
    for (std::size_t n = lo; n < hi; ++n) {
      const double x = g.to_signed(fb.start(n).point);
      auto it = std::find_if(parts.begin(), parts.end(), [&](const P& p) { return p.x == x; });
      if (it != parts.end()) {
        fb.join(n, it->rep, k);
      } else {
        parts.push_back(P{n, x});
        fb.set_point(n, g.from_signed(x));
      }
    }
    fb.record();
    if (k >= grid.horizon_step) break;

    std::sort(parts.begin(), parts.end(), [](const P& a, const P& b) { return a.x < b.x; });
    std::vector<double> next(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const double inc = quantize(sd * noise.normal(StreamTag::kParticle, parts[i].rep, static_cast<std::uint64_t>(k)),
                                  cfg.quantum);
      next[i] = std::clamp(parts[i].x + inc, -cfg.r_max, cfg.r_max);
    }
    std::vector<std::size_t> order(parts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SlotUnion uf(parts.size());
    unite_crossing_runs(order, next, snap, uf);
    for (std::size_t i = 0; i < parts.size(); ++i) parts[i].x = next[i];
    // Survivor keeps its own new position, so each merged run collapses onto it.
    collapse(parts, uf, fb, k + 1);
    for (const auto& p : parts) fb.set_point(p.rep, g.from_signed(p.x));
  }
  return fb.finish(g, cfg, cfg.quantum, base_meta(FlowKind::coalescing_bm(), g, noise));
}

// ----------------------------------------------------------- Walsh star

Skeleton simulate_walsh_star(const MetricGraph& g, std::span<const StartPoint> starts, const CounterRng& noise,
                             const SimulationConfig& cfg) {
  require_star(g);
  cfg.validate();
  const TimeGrid grid = cfg.grid();
  const auto& weights = g.vertex(0).transmission;
  FlowBuilder fb(starts, grid);
  struct P {
    std::size_t rep;
    int edge;
    double r;
  };
  auto pt = [&](const P& p) { return g.star_point(p.edge, p.r); };
  std::vector<P> parts;
  const double sd = std::sqrt(cfg.dt);
  const double snap = cfg.snap_tolerance();
  const int d = static_cast<int>(g.edge_count());
  for (std::int64_t k = fb.first_step();; ++k) {
    const auto [lo, hi] = fb.starting(k);
    for (std::size_t n = lo; n < hi; ++n) {
      const GraphPoint x = fb.start(n).point;
      auto it = std::find_if(parts.begin(), parts.end(), [&](const P& p) { return pt(p) == x; });
      if (it != parts.end()) {
        fb.join(n, it->rep, k);
      } else {
        parts.push_back(P{n, x.on_vertex() ? 0 : x.edge, x.on_vertex() ? 0.0 : x.coord});
        fb.set_point(n, x);
      }
    }
    fb.record();
    if (k >= grid.horizon_step) break;

    const std::size_t m = parts.size();
    std::vector<P> next(parts);
    for (std::size_t i = 0; i < m; ++i) {
      const double inc = quantize(sd * noise.normal(StreamTag::kParticle, parts[i].rep, static_cast<std::uint64_t>(k)),
                                  cfg.quantum);
      auto& q = next[i];
      q.r = clamp_radius(std::max(parts[i].r + inc, 0.0), cfg.r_max);
      if (parts[i].r == 0 && q.r > 0) {
        q.edge = draw_index(weights, noise.uniform(StreamTag::kEdgeChoice, parts[i].rep, static_cast<std::uint64_t>(k + 1)));
      }
    }
    SlotUnion uf(m);
    std::size_t at_vertex = SIZE_MAX;
    for (std::size_t i = 0; i < m; ++i) {
      if (next[i].r != 0) continue;
      if (at_vertex == SIZE_MAX) at_vertex = i;
      else uf.unite(at_vertex, i);
    }
    // On each edge j, view the star as the line through j: points on j are
    // positive, everything else is reflected to the negative side.
    for (int j = 0; j < d; ++j) {
      std::vector<std::size_t> idx;
      std::vector<double> before(m), after(m);
      for (std::size_t i = 0; i < m; ++i) {
        const bool was_on = parts[i].r > 0 && parts[i].edge == j;
        const bool now_on = next[i].r > 0 && next[i].edge == j;
        if (!was_on && !now_on) continue;
        before[i] = was_on ? parts[i].r : -parts[i].r;
        after[i] = now_on ? next[i].r : -next[i].r;
        idx.push_back(i);
      }
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return before[a] < before[b]; });
      unite_crossing_runs(idx, after, snap, uf);
    }
    parts = std::move(next);
    collapse(parts, uf, fb, k + 1);
    for (const auto& p : parts) fb.set_point(p.rep, pt(p));
  }
  FlowKind kind = FlowKind::walsh(weights);
  return fb.finish(g, cfg, cfg.quantum, base_meta(kind, g, noise));
}

// ---------------------------------------------------------- Tanaka line

Skeleton simulate_tanaka_line(std::span<const StartPoint> starts, const CounterRng& noise,
                              const SimulationConfig& cfg) {
  cfg.validate();
  const MetricGraph g = MetricGraph::line(cfg.r_max);
  const TimeGrid grid = cfg.grid();
  const auto W = common_brownian_path(noise, cfg);
  FlowBuilder fb(starts, grid);
  // Before the first zero, |X| = base + W; afterwards |X| = W - running min.
  struct P {
    std::size_t rep;
    bool post;
    double base;
    double low;
    int sign;
    double mod;
  };
  auto pt = [&](const P& p) { return g.from_signed(p.sign * p.mod); };
  std::vector<P> parts;
  for (std::int64_t k = fb.first_step();; ++k) {
    const double wk = W[static_cast<std::size_t>(k)];
    const auto [lo, hi] = fb.starting(k);
    for (std::size_t n = lo; n < hi; ++n) {
      const GraphPoint x = fb.start(n).point;
      auto it = std::find_if(parts.begin(), parts.end(), [&](const P& p) { return pt(p) == x; });
      if (it != parts.end()) {
        fb.join(n, it->rep, k);
        continue;
      }
      const double sx = g.to_signed(x);
      P p{n, sx == 0, std::abs(sx) - wk, wk, sx >= 0 ? 1 : -1, std::abs(sx)};
      parts.push_back(p);
      fb.set_point(n, x);
    }
    fb.record();
    if (k >= grid.horizon_step) break;

    const double w1 = W[static_cast<std::size_t>(k + 1)];
    for (auto& p : parts) {
      const double prev = p.mod;
      if (!p.post) {
        const double m = p.base + w1;
        if (m <= 0) {
          p.post = true;
          p.low = w1;
          p.mod = 0;
        } else {
          p.mod = m;
        }
      } else {
        p.low = std::min(p.low, w1);
        p.mod = w1 - p.low;
        if (prev == 0 && p.mod > 0) {
          p.sign = noise.uniform(StreamTag::kExcursionSign, p.rep, static_cast<std::uint64_t>(k + 1)) < 0.5 ? 1 : -1;
        }
      }
      p.mod = clamp_radius(p.mod, cfg.r_max);
    }
    std::vector<std::size_t> order(parts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return parts[a].sign * parts[a].mod < parts[b].sign * parts[b].mod;
    });
    SlotUnion uf(parts.size());
    for (std::size_t i = 1; i < order.size(); ++i) {
      if (pt(parts[order[i]]) == pt(parts[order[i - 1]])) uf.unite(order[i], order[i - 1]);
    }
    collapse(parts, uf, fb, k + 1);
    for (const auto& p : parts) fb.set_point(p.rep, pt(p));
  }
  return fb.finish(g, cfg, cfg.quantum, base_meta(FlowKind::tanaka(), g, noise));
}

// ----------------------------------------------------- lattice skew flows

namespace {

// Shared lattice engine for the skew BM and the star Tanaka flow. `y` is the
// signed site of the skew walk; `edge` is the lifted edge (star only).
Skeleton simulate_lattice(const MetricGraph& g, const FlowKind& kind, double beta, std::span<const StartPoint> starts,
                          const CounterRng& noise, const SimulationConfig& cfg) {
  cfg.validate();
  const TimeGrid grid = cfg.grid();
  const double h = lattice_step(cfg.dt, cfg.quantum);
  const bool star = kind.type == FlowType::kTanakaStar;
  const int l = kind.sign_split;
  std::vector<double> pos_w, neg_w;
  if (star) {
    const auto& w = g.vertex(0).transmission;
    pos_w.assign(w.size(), 0.0);
    neg_w.assign(w.size(), 0.0);
    double sp = 0, sn = 0;
    for (std::size_t j = 0; j < w.size(); ++j) (static_cast<int>(j) < l ? sp : sn) += w[j];
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (static_cast<int>(j) < l) pos_w[j] = sp > 0 ? w[j] / sp : 0;
      else neg_w[j] = sn > 0 ? w[j] / sn : 0;
    }
  }
  const auto max_site = static_cast<std::int64_t>(std::floor(cfg.r_max / h));
  FlowBuilder fb(starts, grid);
  struct P {
    std::size_t rep;
    std::int64_t y;
    int edge;
  };
  auto pt = [&](const P& p) -> GraphPoint {
    if (p.y == 0) return g.vertex_point(0);
    const double r = static_cast<double>(p.y < 0 ? -p.y : p.y) * h;
    return star ? g.point(p.edge, r) : g.from_signed(static_cast<double>(p.y) * h);
  };
  std::vector<P> parts;
  for (std::int64_t k = fb.first_step();; ++k) {
    const auto [lo, hi] = fb.starting(k);
    for (std::size_t n = lo; n < hi; ++n) {
      const GraphPoint x = fb.start(n).point;
      const double gx = star ? tanaka_star_projection(g, l, x) : g.to_signed(x);
      const double site = gx / h;
      const auto y = static_cast<std::int64_t>(std::llround(site));
      if (static_cast<double>(y) != site || ((y - k) % 2 + 2) % 2 != 0) {
        std::ostringstream os;
        os << "start " << n << " is not a lattice site of matching parity";
        throw ParameterError(os.str());
      }
      auto it = std::find_if(parts.begin(), parts.end(), [&](const P& p) { return pt(p) == x; });
      if (it != parts.end()) {
        fb.join(n, it->rep, k);
        continue;
      }
      parts.push_back(P{n, y, x.on_vertex() ? 0 : x.edge});
      fb.set_point(n, x);
    }
    fb.record();
    if (k >= grid.horizon_step) break;

    const int xi = lattice_common_step(noise, k);
    const int z = lattice_zero_step(noise, k, beta);
    for (auto& p : parts) {
      const bool from_zero = p.y == 0;
      p.y += from_zero ? z : xi;
      p.y = std::clamp(p.y, -max_site, max_site);
      if (star && from_zero && p.y != 0) {
        const double u = noise.uniform(StreamTag::kEdgeChoice, p.rep, static_cast<std::uint64_t>(k + 1));
        p.edge = draw_index(p.y > 0 ? pos_w : neg_w, u);
      }
    }
    std::vector<std::size_t> order(parts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return PointLess{}(pt(parts[a]), pt(parts[b]));
    });
    SlotUnion uf(parts.size());
    for (std::size_t i = 1; i < order.size(); ++i) {
      if (pt(parts[order[i]]) == pt(parts[order[i - 1]])) uf.unite(order[i], order[i - 1]);
    }
    collapse(parts, uf, fb, k + 1);
    for (const auto& p : parts) fb.set_point(p.rep, pt(p));
  }
  auto meta = base_meta(kind, g, noise);
  meta["lattice_step"] = h;
  if (star) meta["skew_beta"] = beta;
  return fb.finish(g, cfg, h, std::move(meta));
}

}  // namespace

Skeleton simulate_skew_bm_lattice(double beta, std::span<const StartPoint> starts, const CounterRng& noise,
                                  const SimulationConfig& cfg) {
  const FlowKind kind = FlowKind::skew(beta);
  kind.validate();
  return simulate_lattice(MetricGraph::line(cfg.r_max), kind, beta, starts, noise, cfg);
}

Skeleton simulate_tanaka_star(const MetricGraph& g, int sign_split, std::span<const StartPoint> starts,
                              const CounterRng& noise, const SimulationConfig& cfg) {
  require_star(g);
  const FlowKind kind = FlowKind::tanaka_star(g.vertex(0).transmission, sign_split);
  kind.validate();
  return simulate_lattice(g, kind, kind.star_beta(), starts, noise, cfg);
}

Skeleton simulate(const FlowKind& kind, const MetricGraph& g, std::span<const StartPoint> starts, std::uint64_t seed,
                  const SimulationConfig& cfg) {
  kind.validate();
  const CounterRng noise(seed);
  switch (kind.type) {
    case FlowType::kCoalescingBM: return simulate_coalescing_bm(starts, noise, cfg);
    case FlowType::kWalshStar: return simulate_walsh_star(g, starts, noise, cfg);
    case FlowType::kTanakaLine: return simulate_tanaka_line(starts, noise, cfg);
    case FlowType::kSkewBM: return simulate_skew_bm_lattice(kind.beta, starts, noise, cfg);
    case FlowType::kTanakaStar: return simulate_tanaka_star(g, kind.sign_split, starts, noise, cfg);
  }
  throw ParameterError("unknown flow kind");
}

}  // namespace cflow
