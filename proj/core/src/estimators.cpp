#include "cflow/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cflow/parallel.hpp"
#include "cflow/skeleton.hpp"

namespace cflow {

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kPass: return "pass";
    case Verdict::kFail: return "fail";
    case Verdict::kInconclusive: return "inconclusive";
  }
  return "inconclusive";
}

namespace {

const char* comparison_name(Comparison c) {
  switch (c) {
    case Comparison::kNone: return "none";
    case Comparison::kAtMost: return "at_most";
    case Comparison::kAtLeast: return "at_least";
    case Comparison::kWithin: return "within";
  }
  return "none";
}

}  // namespace

Interval wilson_interval(std::size_t successes, std::size_t n, double z) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1 + z2 / nn;
  const double centre = (ph + z2 / (2 * nn)) / denom;
  const double half = z * std::sqrt(ph * (1 - ph) / nn + z2 / (4 * nn * nn)) / denom;
  return {std::clamp(centre - half, 0.0, 1.0), std::clamp(centre + half, 0.0, 1.0)};
}

Interval mean_interval(double mean, double sd, std::size_t n, double z) {
  if (n == 0) return {-kInfinity, kInfinity};
  const double half = z * sd / std::sqrt(static_cast<double>(n));
  return {mean - half, mean + half};
}

void EstimateReport::decide() {
  switch (comparison) {
    case Comparison::kNone: verdict = Verdict::kPass; break;
    case Comparison::kAtMost:
      verdict = ci.hi <= target ? Verdict::kPass : (ci.lo > target ? Verdict::kFail : Verdict::kInconclusive);
      break;
    case Comparison::kAtLeast:
      verdict = ci.lo >= target ? Verdict::kPass : (ci.hi < target ? Verdict::kFail : Verdict::kInconclusive);
      break;
    case Comparison::kWithin: {
      const double half = (ci.hi - ci.lo) / 2;
      if (std::abs(estimate - target) <= tolerance && half <= tolerance) verdict = Verdict::kPass;
      else if (ci.hi < target - tolerance || ci.lo > target + tolerance) verdict = Verdict::kFail;
      else verdict = Verdict::kInconclusive;
      break;
    }
  }
}

nlohmann::json EstimateReport::to_json() const {
  nlohmann::json j{{"name", name},
                   {"estimate", estimate},
                   {"samples", samples},
                   {"ci_lo", ci.lo},
                   {"ci_hi", ci.hi},
                   {"comparison", comparison_name(comparison)},
                   {"target", target},
                   {"verdict", to_string(verdict)}};
  if (comparison == Comparison::kWithin) j["tolerance"] = tolerance;
  if (censored_fraction > 0) j["censored_fraction"] = censored_fraction;
  if (!details.empty()) j["details"] = details;
  return j;
}

nlohmann::json reports_to_json(const std::vector<EstimateReport>& reports) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : reports) a.push_back(r.to_json());
  return a;
}

std::string reports_to_csv(const std::vector<EstimateReport>& reports) {
  std::ostringstream os;
  os.precision(17);
  os << "name,estimate,ci_lo,ci_hi,target,verdict\n";
  for (const auto& r : reports) {
    os << r.name << ',' << r.estimate << ',' << r.ci.lo << ',' << r.ci.hi << ',' << r.target << ','
       << to_string(r.verdict) << '\n';
  }
  return os.str();
}

int exit_code_for(const std::vector<EstimateReport>& reports) {
  bool inconclusive = false;
  for (const auto& r : reports) {
    if (r.verdict == Verdict::kFail) return 1;
    if (r.verdict == Verdict::kInconclusive) inconclusive = true;
  }
  return inconclusive ? 3 : 0;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ParameterError("ks_statistic needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double ks_threshold(std::size_t n, std::size_t m) {
  const double a = static_cast<double>(n), b = static_cast<double>(m);
  return 1.358 * std::sqrt((a + b) / (a * b));
}

nlohmann::json PropertyConstants::to_json() const {
  return {{"alpha", alpha}, {"beta", beta},   {"kappa", kappa},         {"p", p},
          {"C", C},         {"C1", C1()},     {"C2", C2()},             {"grid_points", grid_points},
          {"worst_lower", worst_lower}};
}

// ------------------------------------------------------------ motions

namespace {

double signed_coord(const MetricGraph& g, const GraphPoint& p) { return g.to_signed(p); }

void require_trials(std::size_t N) {
  if (N == 0) throw ParameterError("sample count must be positive");
}

// Probability that a Brownian bridge of variance rate v from a > 0 to b > 0
// over time dt touches zero.
double bridge_hit(double a, double b, double v, double dt) { return std::exp(-2 * a * b / (v * dt)); }

// Trial-level outcome: whether the event happened by the horizon, and when.
struct Outcome {
  bool hit = false;
  double time = 0.0;
};

std::vector<Outcome> run_trials(std::size_t N, int threads, const std::function<Outcome(std::size_t)>& trial) {
  std::vector<Outcome> out(N);
  parallel_for(N, resolve_threads(threads), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = trial(i);
  });
  return out;
}

// Lattice state for skew BM (line) and the star Tanaka walk. y is the signed
// site; edge is meaningful on the star when y != 0.
struct LatticeSpec {
  bool star = false;
  double beta = 0.0;
  double h = 0.0;
  std::vector<double> pos_w, neg_w;
};

LatticeSpec lattice_spec(const FlowKind& kind, const MetricGraph& g, double h) {
  LatticeSpec s;
  s.h = h;
  s.star = kind.type == FlowType::kTanakaStar;
  s.beta = s.star ? kind.star_beta() : kind.beta;
  if (s.star) {
    const auto& w = g.vertex(0).transmission;
    const int l = kind.sign_split;
    s.pos_w.assign(w.size(), 0.0);
    s.neg_w.assign(w.size(), 0.0);
    double sp = 0, sn = 0;
    for (std::size_t j = 0; j < w.size(); ++j) (static_cast<int>(j) < l ? sp : sn) += w[j];
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (static_cast<int>(j) < l) s.pos_w[j] = sp > 0 ? w[j] / sp : 0;
      else s.neg_w[j] = sn > 0 ? w[j] / sn : 0;
    }
  }
  return s;
}

struct LatticeParticle {
  std::int64_t y = 0;
  int edge = 0;
};

// Nearest even site to the projection of x.
LatticeParticle lattice_start(const FlowKind& kind, const MetricGraph& g, const LatticeSpec& s, const GraphPoint& x) {
  const double gx = s.star ? tanaka_star_projection(g, kind.sign_split, x) : g.to_signed(x);
  auto y = static_cast<std::int64_t>(std::llround(gx / s.h));
  if (y % 2 != 0) y += (gx / s.h > static_cast<double>(y)) ? 1 : -1;
  LatticeParticle p{y, x.on_vertex() ? 0 : x.edge};
  if (s.star && y != 0) {
    // keep the edge of x when the rounding did not cross the vertex
    const bool pos_edge = x.edge >= 0 && x.edge < kind.sign_split;
    if (x.on_vertex() || pos_edge != (y > 0)) p.edge = y > 0 ? 0 : kind.sign_split;
  }
  return p;
}

GraphPoint lattice_point(const MetricGraph& g, const LatticeSpec& s, const LatticeParticle& p) {
  if (p.y == 0) return g.vertex_point(0);
  const double r = static_cast<double>(std::llabs(p.y)) * s.h;
  if (s.star) return g.star_point(p.edge, std::min(r, g.r_max()));
  return g.from_signed(std::clamp(static_cast<double>(p.y) * s.h, -g.r_max(), g.r_max()));
}

void lattice_move(LatticeParticle& p, int xi, int z, const LatticeSpec& s, StreamCursor& cur) {
  const bool from_zero = p.y == 0;
  p.y += from_zero ? z : xi;
  if (s.star && from_zero && p.y != 0) p.edge = draw_index(p.y > 0 ? s.pos_w : s.neg_w, cur.uniform());
}

int common_sign(StreamCursor& cur) { return cur.uniform() < 0.5 ? 1 : -1; }
int zero_sign(StreamCursor& cur, double beta) { return cur.uniform() < (1 + beta) / 2 ? 1 : -1; }

// Walsh radial state.
struct WalshParticle {
  int edge = 0;
  double r = 0.0;
};

WalshParticle walsh_start(const GraphPoint& x) {
  return x.on_vertex() ? WalshParticle{0, 0.0} : WalshParticle{x.edge, x.coord};
}

void walsh_move(WalshParticle& p, double inc, const std::vector<double>& w, StreamCursor& cur) {
  const double r0 = p.r;
  p.r = std::max(p.r + inc, 0.0);
  if (r0 == 0 && p.r > 0) p.edge = draw_index(w, cur.uniform());
}

GraphPoint walsh_point(const MetricGraph& g, const WalshParticle& p) {
  return p.r == 0 ? g.vertex_point(0) : g.star_point(p.edge, std::min(p.r, g.r_max()));
}

// Tanaka one-point state driven by W: before the first zero |X| = base + W,
// afterwards |X| = W - running min with a fresh sign per excursion.
struct TanakaParticle {
  bool post = false;
  double base = 0.0;
  double low = 0.0;
  int sign = 1;
  double mod = 0.0;

  static TanakaParticle start(double x) {
    return {x == 0, std::abs(x), 0.0, x >= 0 ? 1 : -1, std::abs(x)};
  }
  void move(double w, StreamCursor& cur) {
    const double prev = mod;
    if (!post) {
      mod = base + w;
      if (mod <= 0) {
        post = true;
        low = w;
        mod = 0;
      }
    } else {
      low = std::min(low, w);
      mod = w - low;
      if (prev == 0 && mod > 0) sign = cur.uniform() < 0.5 ? 1 : -1;
    }
  }
  double value() const { return sign * mod; }
};

bool outside(const std::optional<Region>& K, const MetricGraph& g, const GraphPoint& p) {
  return K && !K->contains(g, p);
}

// One trial of the two-point motion; returns the first grid time of meeting
// (or exit of K) within `steps` steps of size dt.
Outcome pair_trial(const FlowKind& kind, const MetricGraph& g, const GraphPoint& x, const GraphPoint& y, double dt,
                   int steps, const std::optional<Region>& K, StreamCursor& cur) {
  const double sd = std::sqrt(dt);
  auto done = [&](int k) { return Outcome{true, k * dt}; };
  switch (kind.type) {
    case FlowType::kCoalescingBM: {
      double a = signed_coord(g, x), b = signed_coord(g, y);
      if (a > b) std::swap(a, b);
      for (int k = 0; k < steps; ++k) {
        const double a1 = a + sd * cur.normal(), b1 = b + sd * cur.normal();
        const double d0 = b - a, d1 = b1 - a1;
        const double u = cur.uniform();
        if (d1 <= 0 || u < bridge_hit(d0, d1, 2.0, dt)) return done(k + 1);
        a = a1;
        b = b1;
        if (outside(K, g, g.from_signed(a)) || outside(K, g, g.from_signed(b))) return done(k + 1);
      }
      return {};
    }
    case FlowType::kTanakaLine: {
      const double sx = signed_coord(g, x), sy = signed_coord(g, y);
      auto p = TanakaParticle::start(sx), q = TanakaParticle::start(sy);
      const double level = -std::max(std::abs(sx), std::abs(sy));
      double w = 0;
      for (int k = 0; k < steps; ++k) {
        const double w1 = w + sd * cur.normal();
        const double u = cur.uniform();
        if (w1 <= level || u < bridge_hit(w - level, w1 - level, 1.0, dt)) return done(k + 1);
        w = w1;
        p.move(w, cur);
        q.move(w, cur);
        if (outside(K, g, g.from_signed(p.value())) || outside(K, g, g.from_signed(q.value()))) return done(k + 1);
      }
      return {};
    }
    case FlowType::kWalshStar: {
      const auto& wts = g.vertex(0).transmission;
      auto p = walsh_start(x), q = walsh_start(y);
      for (int k = 0; k < steps; ++k) {
        auto p1 = p, q1 = q;
        walsh_move(p1, sd * cur.normal(), wts, cur);
        walsh_move(q1, sd * cur.normal(), wts, cur);
        const double u = cur.uniform();
        bool met = p1.r == 0 && q1.r == 0;
        for (int j = 0; j < static_cast<int>(g.edge_count()) && !met; ++j) {
          auto on = [j](const WalshParticle& s) { return s.r > 0 && s.edge == j; };
          if (!(on(p) || on(p1)) || !(on(q) || on(q1))) continue;
          auto coord = [&](const WalshParticle& s) { return on(s) ? s.r : -s.r; };
          const double d0 = coord(p) - coord(q), d1 = coord(p1) - coord(q1);
          if (d0 * d1 <= 0) met = true;
          else if (on(p) && on(p1) && on(q) && on(q1) && u < bridge_hit(std::abs(d0), std::abs(d1), 2.0, dt))
            met = true;
        }
        if (met) return done(k + 1);
        p = p1;
        q = q1;
        if (outside(K, g, walsh_point(g, p)) || outside(K, g, walsh_point(g, q))) return done(k + 1);
      }
      return {};
    }
    case FlowType::kSkewBM:
    case FlowType::kTanakaStar: {
      const auto s = lattice_spec(kind, g, sd);
      auto p = lattice_start(kind, g, s, x), q = lattice_start(kind, g, s, y);
      auto same = [&] { return p.y == q.y && (p.y == 0 || !s.star || p.edge == q.edge); };
      if (same()) return done(0);
      for (int k = 0; k < steps; ++k) {
        const int xi = common_sign(cur), z = zero_sign(cur, s.beta);
        lattice_move(p, xi, z, s, cur);
        lattice_move(q, xi, z, s, cur);
        if (same()) return done(k + 1);
        if (outside(K, g, lattice_point(g, s, p)) || outside(K, g, lattice_point(g, s, q))) return done(k + 1);
      }
      return {};
    }
  }
  return {};
}

// One trial of the one-point motion; hit iff sup over the grid of rho(X, x) > r.
Outcome exit_trial(const FlowKind& kind, const MetricGraph& g, const GraphPoint& x, double r, double dt, int steps,
                   StreamCursor& cur) {
  const double sd = std::sqrt(dt);
  auto far = [&](const GraphPoint& p) { return g.distance(p, x) > r; };
  auto done = [&](int k) { return Outcome{true, k * dt}; };
  switch (kind.type) {
    case FlowType::kCoalescingBM: {
      const double a0 = signed_coord(g, x);
      double a = a0;
      for (int k = 0; k < steps; ++k) {
        a += sd * cur.normal();
        if (std::abs(a - a0) > r) return done(k + 1);
      }
      return {};
    }
    case FlowType::kTanakaLine: {
      const double a0 = signed_coord(g, x);
      auto p = TanakaParticle::start(a0);
      double w = 0;
      for (int k = 0; k < steps; ++k) {
        w += sd * cur.normal();
        p.move(w, cur);
        if (std::abs(p.value() - a0) > r) return done(k + 1);
      }
      return {};
    }
    case FlowType::kWalshStar: {
      const auto& wts = g.vertex(0).transmission;
      auto p = walsh_start(x);
      for (int k = 0; k < steps; ++k) {
        walsh_move(p, sd * cur.normal(), wts, cur);
        if (far(walsh_point(g, p))) return done(k + 1);
      }
      return {};
    }
    case FlowType::kSkewBM:
    case FlowType::kTanakaStar: {
      const auto s = lattice_spec(kind, g, sd);
      auto p = lattice_start(kind, g, s, x);
      const GraphPoint x0 = lattice_point(g, s, p);
      for (int k = 0; k < steps; ++k) {
        lattice_move(p, common_sign(cur), zero_sign(cur, s.beta), s, cur);
        if (g.distance(lattice_point(g, s, p), x0) > r) return done(k + 1);
      }
      return {};
    }
  }
  return {};
}

EstimateReport proportion_report(std::string name, const std::vector<Outcome>& outs) {
  EstimateReport rep;
  rep.name = std::move(name);
  const auto hits = static_cast<std::size_t>(std::count_if(outs.begin(), outs.end(), [](const Outcome& o) { return o.hit; }));
  rep.samples = outs.size();
  rep.estimate = static_cast<double>(hits) / static_cast<double>(outs.size());
  rep.ci = wilson_interval(hits, outs.size());
  return rep;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t i) {
  const auto b = CounterRng(seed).block(StreamTag::kSampling, i, 0);
  return (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
}

}  // namespace

EstimateReport estimate_meeting_probability(const FlowKind& kind, const MetricGraph& g, const GraphPoint& x,
                                            const GraphPoint& y, double c, std::size_t N, std::uint64_t seed,
                                            const MonteCarloOptions& opt, const std::optional<Region>& exit_region) {
  kind.validate();
  require_trials(N);
  if (!(c > 0)) throw ParameterError("horizon factor c must be positive");
  if (opt.steps < 1) throw ParameterError("steps must be positive");
  if (!kind.on_star() && !g.is_line()) throw ParameterError("line flow needs the line graph");
  const double rho = g.distance(x, y);
  const double horizon = c * rho * rho;
  EstimateReport rep;
  if (rho == 0) {
    rep.name = "meeting_probability";
    rep.estimate = 1.0;
    rep.samples = N;
    rep.ci = {1.0, 1.0};
  } else {
    const CounterRng rng(seed);
    const double dt = horizon / opt.steps;
    const auto outs = run_trials(N, opt.threads, [&](std::size_t i) {
      StreamCursor cur(rng, StreamTag::kTrial, i);
      return pair_trial(kind, g, x, y, dt, opt.steps, exit_region, cur);
    });
    rep = proportion_report("meeting_probability", outs);
  }
  rep.details = {{"flow", kind.name()},
                 {"x", x},
                 {"y", y},
                 {"rho", rho},
                 {"c", c},
                 {"horizon", horizon},
                 {"steps", opt.steps},
                 {"seed", seed}};
  if (exit_region) rep.details["exit_region"] = exit_region->to_json();
  return rep;
}

PropertyConstants certify_property_p(const FlowKind& kind, double lo, double hi, double beta, int grid_points,
                                     std::size_t N, std::uint64_t seed, const MonteCarloOptions& opt) {
  if (kind.on_star()) throw ParameterError("constant certification is implemented for line flows");
  if (!(hi > lo)) throw ParameterError("compact interval must have lo < hi");
  if (grid_points < 2) throw ParameterError("need at least two grid points");
  if (!(beta > 0)) throw ParameterError("beta must be positive");
  const MetricGraph g = MetricGraph::line();
  const Region K = Region::signed_interval(lo, hi);
  PropertyConstants pc;
  pc.beta = beta;
  pc.grid_points = grid_points;
  // Any n points of [lo, hi] contain a pair within (hi - lo)/(n - 1) <= 2 (hi - lo)/n.
  pc.C = 2 * (hi - lo);
  double worst = 1.0;
  std::uint64_t pair = 0;
  for (int i = 0; i < grid_points; ++i) {
    for (int j = i + 1; j < grid_points; ++j, ++pair) {
      const double xa = lo + (hi - lo) * i / (grid_points - 1);
      const double xb = lo + (hi - lo) * j / (grid_points - 1);
      const auto rep = estimate_meeting_probability(kind, g, g.from_signed(xa), g.from_signed(xb), beta, N,
                                                    derive_seed(seed, pair), opt, K);
      worst = std::min(worst, rep.ci.lo);
    }
  }
  pc.worst_lower = worst;
  pc.p = worst / 2;
  if (!(pc.p > 0)) throw ParameterError("certification found no positive meeting probability");
  return pc;
}

namespace {

// n-point coalescing BM on [lo, hi]. Returns the first grid time with at
// most m distinct particles or a particle outside K; `hit` false if censored.
Outcome coalescing_n_trial(std::vector<double> pos, std::size_t m, double lo, double hi, double dt,
                           std::int64_t steps, StreamCursor& cur) {
  const double sd = std::sqrt(dt);
  if (pos.size() <= m) return {true, 0.0};
  std::vector<double> next, pref, suf;
  for (std::int64_t k = 0; k < steps; ++k) {
    const std::size_t n = pos.size();
    next.resize(n);
    for (std::size_t i = 0; i < n; ++i) next[i] = pos[i] + sd * cur.normal();
    pref.assign(n, 0);
    suf.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) pref[i] = i ? std::max(pref[i - 1], next[i]) : next[i];
    for (std::size_t i = n; i-- > 0;) suf[i] = i + 1 < n ? std::min(suf[i + 1], next[i]) : next[i];
    std::vector<double> merged;
    merged.reserve(n);
    merged.push_back(next[0]);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      bool boundary = suf[i + 1] > pref[i];
      if (boundary) {
        const double d0 = pos[i + 1] - pos[i], d1 = next[i + 1] - next[i];
        if (cur.uniform() < bridge_hit(d0, d1, 2.0, dt)) boundary = false;
      }
      if (boundary) merged.push_back(next[i + 1]);
    }
    pos = std::move(merged);
    const double t = static_cast<double>(k + 1) * dt;
    if (pos.size() <= m || pos.front() < lo || pos.back() > hi) return {true, t};
  }
  return {false, static_cast<double>(steps) * dt};
}

std::vector<double> spread(int n, double lo, double hi) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = lo + (hi - lo) * (i + 0.5) / n;
  return v;
}

void require_coalescing(const FlowKind& kind) {
  if (kind.type != FlowType::kCoalescingBM)
    throw ParameterError("n-point rate checks are implemented for coalescing BM");
}

}  // namespace

EstimateReport estimate_coalescence_time(const FlowKind& kind, int n, int m, double lo, double hi, std::size_t N,
                                         std::uint64_t seed, const PropertyConstants& pc,
                                         const CoalescenceOptions& opt) {
  require_coalescing(kind);
  require_trials(N);
  if (n < 1 || m < 1 || m > n) throw ParameterError("need 1 <= m <= n");
  if (!(hi > lo) || !(opt.dt > 0) || !(opt.horizon > 0)) throw ParameterError("invalid coalescence options");
  const auto steps = static_cast<std::int64_t>(std::ceil(opt.horizon / opt.dt));
  const CounterRng rng(seed);
  const auto start = spread(n, lo, hi);
  const auto outs = run_trials(N, opt.threads, [&](std::size_t i) {
    StreamCursor cur(rng, StreamTag::kTrial, i);
    return coalescing_n_trial(start, static_cast<std::size_t>(m), lo, hi, opt.dt, steps, cur);
  });
  double sum = 0, sq = 0;
  std::size_t censored = 0;
  for (const auto& o : outs) {
    sum += o.time;
    sq += o.time * o.time;
    if (!o.hit) ++censored;
  }
  const double nn = static_cast<double>(N);
  EstimateReport rep;
  std::ostringstream name;
  name << "coalescence_time_n" << n << "_m" << m;
  rep.name = name.str();
  rep.samples = N;
  rep.estimate = sum / nn;
  const double var = N > 1 ? std::max(0.0, (sq - sum * sum / nn) / (nn - 1)) : 0.0;
  rep.ci = mean_interval(rep.estimate, std::sqrt(var), N);
  rep.censored_fraction = static_cast<double>(censored) / nn;
  rep.comparison = Comparison::kAtMost;
  rep.target = m == n ? 0.0 : pc.C2() / std::pow(static_cast<double>(m), pc.kappa * pc.alpha - 1);
  rep.details = {{"n", n}, {"m", m}, {"K", {lo, hi}}, {"dt", opt.dt}, {"horizon", opt.horizon},
                 {"seed", seed}, {"constants", pc.to_json()}};
  rep.decide();
  return rep;
}

std::vector<EstimateReport> geometric_tail_check(const FlowKind& kind, int n, double lo, double hi, int j_max,
                                                 std::size_t N, std::uint64_t seed, const PropertyConstants& pc,
                                                 const CoalescenceOptions& opt) {
  require_coalescing(kind);
  require_trials(N);
  if (n < 2 || j_max < 1) throw ParameterError("need n >= 2 and j_max >= 1");
  const double eps = pc.C * std::pow(static_cast<double>(n), -pc.kappa);
  const double unit = pc.beta * std::pow(eps, pc.alpha);
  const double horizon = unit * j_max;
  const auto steps = static_cast<std::int64_t>(std::ceil(horizon / opt.dt));
  const CounterRng rng(seed);
  const auto start = spread(n, lo, hi);
  const auto outs = run_trials(N, opt.threads, [&](std::size_t i) {
    StreamCursor cur(rng, StreamTag::kTrial, i);
    return coalescing_n_trial(start, static_cast<std::size_t>(n - 1), lo, hi, opt.dt, steps, cur);
  });
  std::vector<EstimateReport> reps;
  for (int j = 1; j <= j_max; ++j) {
    const double level = unit * j;
    const auto survivors = static_cast<std::size_t>(
        std::count_if(outs.begin(), outs.end(), [&](const Outcome& o) { return !o.hit || o.time > level + 1e-15; }));
    EstimateReport rep;
    rep.name = "geometric_tail_j" + std::to_string(j);
    rep.samples = N;
    rep.estimate = static_cast<double>(survivors) / static_cast<double>(N);
    rep.ci = wilson_interval(survivors, N);
    rep.comparison = Comparison::kAtMost;
    rep.target = std::pow(1 - pc.p, j);
    rep.details = {{"n", n}, {"j", j}, {"level", level}, {"eps", eps}, {"dt", opt.dt}, {"seed", seed}};
    rep.decide();
    reps.push_back(std::move(rep));
  }
  return reps;
}

std::vector<EstimateReport> distinct_points_curve(const FlowKind& kind, int n_starts, double lo, double hi,
                                                  const std::vector<double>& times, int seeds, std::uint64_t seed,
                                                  double dt, int threads) {
  kind.validate();
  if (n_starts < 1 || seeds < 1 || times.empty()) throw ParameterError("need starts, seeds and times");
  if (!(hi > lo)) throw ParameterError("need lo < hi");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] > 0) || (i && !(times[i] > times[i - 1])))
      throw ParameterError("times must be positive and strictly increasing");
  }
  SimulationConfig cfg;
  cfg.dt = dt;
  cfg.horizon = times.back();
  cfg.t_min = 0;
  cfg.t_max = 0;
  const MetricGraph g = kind.graph(cfg.r_max);
  const TimeGrid grid = cfg.grid();
  std::vector<std::int64_t> steps;
  for (double t : times) steps.push_back(grid.step(t));

  std::vector<StartPoint> starts;
  const double h = kind.lattice() ? lattice_step(dt, cfg.quantum) : cfg.quantum;
  for (int i = 0; i < n_starts; ++i) {
    double v = lo + (hi - lo) * (i + 0.5) / n_starts;
    GraphPoint p;
    if (kind.lattice()) {
      auto site = static_cast<std::int64_t>(std::llround(v / h));
      if (site % 2 != 0) ++site;
      v = static_cast<double>(site) * h;
    } else {
      v = quantize(v, cfg.quantum);
    }
    if (kind.on_star()) {
      const int e = i % static_cast<int>(g.edge_count());
      p = v == 0 ? g.vertex_point(0) : g.star_point(e, std::abs(v));
    } else {
      p = g.from_signed(v);
    }
    starts.push_back({0, p});
  }
  std::sort(starts.begin(), starts.end(),
            [](const StartPoint& a, const StartPoint& b) { return PointLess{}(a.point, b.point); });
  starts.erase(std::unique(starts.begin(), starts.end(),
                           [](const StartPoint& a, const StartPoint& b) { return a.point == b.point; }),
               starts.end());

  std::vector<std::vector<double>> counts(static_cast<std::size_t>(seeds), std::vector<double>(times.size()));
  parallel_for(static_cast<std::size_t>(seeds), resolve_threads(threads), [&](std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s) {
      const Skeleton sk = simulate(kind, g, starts, derive_seed(seed, s), cfg);
      for (std::size_t i = 0; i < steps.size(); ++i)
        counts[s][i] = static_cast<double>(count_distinct(sk, 0, steps[i], Region::whole()));
    }
  });

  std::vector<EstimateReport> reps;
  bool decreasing = true;
  double prev_mean = static_cast<double>(starts.size()) + 1;
  for (std::size_t i = 0; i < times.size(); ++i) {
    double sum = 0, sq = 0, mx = 0;
    for (const auto& c : counts) {
      sum += c[i];
      sq += c[i] * c[i];
      mx = std::max(mx, c[i]);
    }
    const double ns = static_cast<double>(seeds);
    EstimateReport rep;
    std::ostringstream name;
    name << "distinct_points_t" << times[i];
    rep.name = name.str();
    rep.samples = static_cast<std::size_t>(seeds);
    rep.estimate = sum / ns;
    const double var = seeds > 1 ? std::max(0.0, (sq - sum * sum / ns) / (ns - 1)) : 0.0;
    rep.ci = mean_interval(rep.estimate, std::sqrt(var), rep.samples);
    rep.comparison = Comparison::kAtMost;
    rep.target = static_cast<double>(starts.size());
    rep.details = {{"t", times[i]}, {"max", mx}, {"starts", starts.size()}};
    rep.verdict = mx <= rep.target ? Verdict::kPass : Verdict::kFail;
    if (!(rep.estimate < prev_mean)) decreasing = false;
    prev_mean = rep.estimate;
    reps.push_back(std::move(rep));
  }
  EstimateReport mono;
  mono.name = "distinct_points_monotone";
  mono.samples = static_cast<std::size_t>(seeds);
  mono.estimate = decreasing ? 1.0 : 0.0;
  mono.ci = {mono.estimate, mono.estimate};
  mono.comparison = Comparison::kAtLeast;
  mono.target = 1.0;
  mono.details = {{"flow", kind.name()}, {"seeds", seeds}, {"seed", seed}, {"dt", dt}};
  mono.decide();
  reps.push_back(std::move(mono));
  return reps;
}

std::vector<EstimateReport> small_time_exit_curve(const FlowKind& kind, const MetricGraph& g,
                                                  const std::vector<GraphPoint>& starts, double r,
                                                  const std::vector<double>& t_ladder, std::size_t N,
                                                  std::uint64_t seed, double fraction,
                                                  const MonteCarloOptions& opt) {
  kind.validate();
  require_trials(N);
  if (!(r > 0)) throw ParameterError("exit radius must be positive");
  if (starts.empty() || t_ladder.size() < 2) throw ParameterError("need starts and at least two ladder times");
  for (std::size_t i = 1; i < t_ladder.size(); ++i) {
    if (!(t_ladder[i] > 0 && t_ladder[i] < t_ladder[i - 1])) throw ParameterError("ladder must decrease");
  }
  std::vector<EstimateReport> reps;
  std::uint64_t block = 0;
  for (double t : t_ladder) {
    EstimateReport worst;
    bool first = true;
    for (const auto& x : starts) {
      const CounterRng rng(derive_seed(seed, block++));
      const double dt = t / opt.steps;
      const auto outs = run_trials(N, opt.threads, [&](std::size_t i) {
        StreamCursor cur(rng, StreamTag::kTrial, i);
        return exit_trial(kind, g, x, r, dt, opt.steps, cur);
      });
      auto rep = proportion_report("", outs);
      if (first || rep.estimate > worst.estimate) {
        worst = rep;
        worst.details = {{"argmax", x}};
        first = false;
      }
    }
    std::ostringstream name;
    name << "exit_ratio_t" << t;
    worst.name = name.str();
    worst.details["probability"] = worst.estimate;
    worst.details["t"] = t;
    worst.estimate /= t;
    worst.ci = {worst.ci.lo / t, worst.ci.hi / t};
    worst.verdict = Verdict::kPass;
    reps.push_back(std::move(worst));
  }
  EstimateReport decay;
  decay.name = "exit_ratio_decay";
  decay.samples = N;
  decay.estimate = reps.back().estimate;
  decay.ci = reps.back().ci;
  decay.comparison = Comparison::kAtMost;
  decay.target = fraction * reps.front().ci.lo;
  decay.details = {{"flow", kind.name()}, {"r", r}, {"fraction", fraction}, {"largest_ratio", reps.front().estimate},
                   {"steps", opt.steps}, {"seed", seed}};
  decay.decide();
  reps.push_back(std::move(decay));
  return reps;
}

EstimateReport scaling_check_walsh(const MetricGraph& g, double lambda, const GraphPoint& x, double t, std::size_t N,
                                   std::uint64_t seed, const MonteCarloOptions& opt) {
  if (!g.is_star()) throw ParameterError("scaling check needs a star graph");
  if (!(lambda > 0) || !(t > 0)) throw ParameterError("lambda and t must be positive");
  require_trials(N);
  const auto& wts = g.vertex(0).transmission;
  const GraphPoint xs = x.on_vertex() ? x : g.star_point(x.edge, x.coord / lambda);
  const CounterRng rng(seed);
  auto radial = [&](const GraphPoint& from, double horizon, std::uint64_t stream) {
    StreamCursor cur(rng, StreamTag::kTrial, stream);
    auto p = walsh_start(from);
    const double sd = std::sqrt(horizon / opt.steps);
    for (int k = 0; k < opt.steps; ++k) walsh_move(p, sd * cur.normal(), wts, cur);
    return p.r;
  };
  std::vector<double> a(N), b(N);
  parallel_for(N, resolve_threads(opt.threads), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      a[i] = radial(x, lambda * lambda * t, 2 * i) / lambda;
      b[i] = radial(xs, t, 2 * i + 1);
    }
  });
  EstimateReport rep;
  rep.name = "walsh_scaling_ks";
  rep.samples = N;
  rep.estimate = ks_statistic(a, b);
  rep.ci = {rep.estimate, rep.estimate};
  rep.comparison = Comparison::kAtMost;
  rep.target = ks_threshold(N, N);
  rep.details = {{"lambda", lambda}, {"x", x}, {"t", t}, {"steps", opt.steps}, {"seed", seed}};
  rep.decide();
  return rep;
}

}  // namespace cflow
