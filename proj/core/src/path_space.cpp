#include "cflow/path_space.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cflow {

std::int64_t TimeGrid::step(double t) const {
  const double k = std::nearbyint(t / dt);
  if (std::abs(k * dt - t) > 1e-9 * std::max(1.0, std::abs(t))) {
    std::ostringstream os;
    os << "time " << t << " is not on the grid with dt " << dt;
    throw AlignmentError(os.str());
  }
  return static_cast<std::int64_t>(k);
}

std::int64_t TimeGrid::step_floor(double t) const noexcept {
  return static_cast<std::int64_t>(std::floor(t / dt + 1e-9));
}

Path::Path(std::int64_t start_step, double dt, std::vector<GraphPoint> samples)
    : start_(start_step), dt_(dt), samples_(std::move(samples)) {
  if (!(dt > 0)) throw AlignmentError("path time step must be positive");
  if (samples_.empty()) throw AlignmentError("path needs at least one sample");
}

const GraphPoint& Path::at_step(std::int64_t k) const {
  if (k <= start_) return samples_.front();
  const auto off = static_cast<std::size_t>(k - start_);
  return off < samples_.size() ? samples_[off] : samples_.back();
}

namespace {

// Point at fraction u of the way from a to b along a geodesic, when the two
// points share an edge or a vertex; otherwise the nearer sample.
GraphPoint interpolate(const MetricGraph& g, const GraphPoint& a, const GraphPoint& b, double u) {
  if (a == b || u <= 0) return a;
  if (u >= 1) return b;
  auto coord_on = [&](const GraphPoint& p, int e) -> std::optional<double> {
    if (!p.on_vertex()) return p.edge == e ? std::optional<double>(p.coord) : std::nullopt;
    const auto& ed = g.edge(e);
    if (ed.from == p.vertex) return 0.0;
    if (ed.to == p.vertex) return ed.length;
    return std::nullopt;
  };
  const int e = !a.on_vertex() ? a.edge : (!b.on_vertex() ? b.edge : -1);
  if (e >= 0) {
    const auto ca = coord_on(a, e);
    const auto cb = coord_on(b, e);
    if (ca && cb) return g.point(e, *ca + u * (*cb - *ca));
  }
  if (!a.on_vertex() && !b.on_vertex()) {
    for (int v : {g.edge(a.edge).from, g.edge(a.edge).to}) {
      if (v < 0) continue;
      const GraphPoint c = g.vertex_point(v);
      const auto cb = coord_on(c, b.edge);
      if (!cb) continue;
      const double da = g.distance(a, c);
      const double db = g.distance(c, b);
      const double split = da / (da + db);
      if (u <= split) return interpolate(g, a, c, split > 0 ? u / split : 1.0);
      return interpolate(g, c, b, (u - split) / (1 - split));
    }
  }
  return u < 0.5 ? a : b;
}

}  // namespace

GraphPoint Path::at_time(const MetricGraph& g, double t) const {
  const double x = t / dt_;
  const auto k = static_cast<std::int64_t>(std::floor(x));
  const double u = x - static_cast<double>(k);
  if (u < 1e-12) return at_step(k);
  return interpolate(g, at_step(k), at_step(k + 1), u);
}

PathDistance path_distance(const MetricGraph& g, const Path& f, const Path& h, int n_max) {
  if (f.dt() != h.dt()) throw AlignmentError("paths live on different time grids");
  if (n_max < 1) throw AlignmentError("n_max must be at least 1");
  const double dt = f.dt();
  const std::int64_t lo = std::min(f.start_step(), h.start_step());
  const std::int64_t hi = std::max(f.end_step(), h.end_step());
  std::vector<double> d(static_cast<std::size_t>(hi - lo + 1));
  for (std::int64_t k = lo; k <= hi; ++k) {
    d[static_cast<std::size_t>(k - lo)] = g.distance(f.at_step(k), h.at_step(k));
  }
  auto at = [&](std::int64_t k) { return d[static_cast<std::size_t>(k - lo)]; };

  PathDistance out;
  out.value = std::abs(f.start_time() - h.start_time());
  // Windows [-n, n] are nested, so the running max only ever extends outward.
  std::int64_t cur_lo = 0, cur_hi = -1;
  double running = 0.0;
  for (int n = 1; n <= n_max; ++n) {
    const auto a = static_cast<std::int64_t>(std::ceil(-n / dt - 1e-9));
    const auto b = static_cast<std::int64_t>(std::floor(n / dt + 1e-9));
    double sup;
    if (b < lo) {
      sup = at(lo);
    } else if (a > hi) {
      sup = at(hi);
    } else {
      const std::int64_t wa = std::max(a, lo), wb = std::min(b, hi);
      if (cur_hi < cur_lo) {
        cur_lo = wa;
        cur_hi = wa - 1;
      }
      for (std::int64_t k = wa; k < cur_lo; ++k) running = std::max(running, at(k));
      for (std::int64_t k = cur_hi + 1; k <= wb; ++k) running = std::max(running, at(k));
      cur_lo = std::min(cur_lo, wa);
      cur_hi = std::max(cur_hi, wb);
      sup = running;
    }
    out.value += std::ldexp(std::min(1.0, sup), -n);
  }
  out.truncation_bound = std::ldexp(1.0, -n_max);
  return out;
}

Path restrict_path(const Path& f, std::int64_t step) {
  if (step > f.end_step()) throw AlignmentError("restriction time beyond the path horizon");
  std::vector<GraphPoint> samples;
  samples.reserve(static_cast<std::size_t>(f.end_step() - step + 1));
  for (std::int64_t k = step; k <= f.end_step(); ++k) samples.push_back(f.at_step(k));
  return Path(step, f.dt(), std::move(samples));
}

namespace {

struct LagScan {
  bool ok = true;
  double worst = 0.0;
  ModulusWitness witness;
};

LagScan scan_lags(const MetricGraph& g, std::span<const Path> family, std::int64_t c_step,
                  std::int64_t max_lag, double eps) {
  LagScan out;
  const bool line = g.is_line();
  for (std::size_t p = 0; p < family.size(); ++p) {
    const Path& f = family[p];
    const std::int64_t last = std::min(f.end_step(), c_step);
    const auto s = f.samples();
    std::vector<double> x;
    if (line) {
      x.resize(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) x[i] = g.to_signed(s[i]);
    }
    for (std::int64_t a = f.start_step(); a < last; ++a) {
      const auto ia = static_cast<std::size_t>(a - f.start_step());
      const std::int64_t bmax = std::min(last, a + max_lag);
      for (std::int64_t b = a + 1; b <= bmax; ++b) {
        const auto ib = static_cast<std::size_t>(b - f.start_step());
        const double d = line ? std::abs(x[ia] - x[ib]) : g.distance(s[ia], s[ib]);
        if (d > out.worst) out.worst = d;
        if (d >= eps) {
          out.ok = false;
          out.witness = ModulusWitness{p, a, b, d};
          return out;
        }
      }
    }
  }
  return out;
}

}  // namespace

EquicontinuityResult equicontinuity_check(const MetricGraph& g, std::span<const Path> family,
                                          double C, double eps) {
  EquicontinuityResult res;
  if (family.empty()) {
    res.ok = true;
    return res;
  }
  const double dt = family.front().dt();
  std::int64_t min_start = family.front().start_step();
  for (const auto& f : family) {
    if (f.dt() != dt) throw AlignmentError("family mixes time grids");
    min_start = std::min(min_start, f.start_step());
  }
  const auto c_step = static_cast<std::int64_t>(std::floor(C / dt + 1e-9));
  for (const auto& f : family) {
    if (f.start_step() > c_step) throw AlignmentError("C precedes a path start time");
  }
  const std::int64_t max_lag = std::max<std::int64_t>(0, c_step - min_start);

  auto top = scan_lags(g, family, c_step, max_lag, eps);
  if (top.ok) {
    res.ok = true;
    res.alpha = static_cast<double>(max_lag) * dt;
    res.worst_modulus = top.worst;
    return res;
  }
  std::int64_t good = 0, bad = max_lag;
  LagScan good_scan, bad_scan = top;
  while (bad - good > 1) {
    const std::int64_t mid = good + (bad - good) / 2;
    auto s = scan_lags(g, family, c_step, mid, eps);
    if (s.ok) {
      good = mid;
      good_scan = s;
    } else {
      bad = mid;
      bad_scan = s;
    }
  }
  if (good >= 1) {
    res.ok = true;
    res.alpha = static_cast<double>(good) * dt;
    res.worst_modulus = good_scan.worst;
    return res;
  }
  // No whole step qualifies. Along the interpolated extension a lag a < dt
  // moves at most (a / dt) M1, M1 the largest one-step move, so half of
  // dt eps / M1 is admissible.
  const auto one = scan_lags(g, family, c_step, 1, kInfinity);
  res.witness = bad_scan.witness;
  res.sub_grid = true;
  res.worst_modulus = one.worst;
  res.ok = std::isfinite(one.worst);
  res.alpha = res.ok ? 0.5 * dt * eps / one.worst : 0.0;
  return res;
}

}  // namespace cflow
