#include "cflow/flow_extension.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>

#include "cflow/noise.hpp"
#include "cflow/parallel.hpp"

namespace cflow {

double EpsilonSchedule::operator()(int k) const noexcept { return std::max(std::ldexp(1.0, -k), floor); }

int EpsilonSchedule::floor_index() const noexcept {
  int k = 1;
  while (std::ldexp(1.0, -k) > floor && k < 1074) ++k;
  return k;
}

// ------------------------------------------------------------- selector

std::size_t select_limit_index(std::size_t len, const std::function<bool(std::size_t, std::size_t)>& same,
                               const std::function<double(std::size_t, std::size_t)>& dist, int window,
                               double radius) {
  if (len == 0) throw std::invalid_argument("selector needs a nonempty sequence");
  const auto w = static_cast<std::size_t>(std::max(1, window));
  if (len >= w) {
    bool constant = true;
    for (std::size_t i = len - w + 1; i < len && constant; ++i) constant = same(len - w, i);
    if (constant) return len - w;
  }
  // Distinct values in order of first appearance, with multiplicities.
  std::vector<std::size_t> rep_of(len), reps;
  std::vector<std::size_t> mult;
  for (std::size_t i = 0; i < len; ++i) {
    std::size_t r = reps.size();
    for (std::size_t j = 0; j < reps.size(); ++j) {
      if (same(reps[j], i)) {
        r = j;
        break;
      }
    }
    if (r == reps.size()) {
      reps.push_back(i);
      mult.push_back(0);
    }
    ++mult[r];
    rep_of[i] = r;
  }
  const std::size_t m = reps.size();
  std::vector<std::size_t> comp(m);
  std::iota(comp.begin(), comp.end(), std::size_t{0});
  auto find = [&](std::size_t i) {
    while (comp[i] != i) i = comp[i] = comp[comp[i]];
    return i;
  };
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      if (find(a) != find(b) && dist(reps[a], reps[b]) <= radius) {
        comp[std::max(find(a), find(b))] = std::min(find(a), find(b));
      }
    }
  }
  const std::size_t tail = len / 2;
  std::vector<std::size_t> size(m, 0), first_tail(m, len);
  for (std::size_t r = 0; r < m; ++r) size[find(r)] += mult[r];
  for (std::size_t i = len; i-- > tail;) first_tail[find(rep_of[i])] = i;
  std::size_t best = m;
  for (std::size_t c = 0; c < m; ++c) {
    if (find(c) != c || first_tail[c] == len) continue;
    // Component roots are their smallest rep, so ties go to the earliest value.
    if (best == m || size[c] > size[best]) best = c;
  }
  return first_tail[best];
}

std::size_t select_limit_point(const MetricGraph& g, std::span<const Path> seq, const SelectorParams& params) {
  const double radius = params.cluster_radius > 0 ? params.cluster_radius : 1e-3;
  return select_limit_index(
      seq.size(), [&](std::size_t a, std::size_t b) { return seq[a] == seq[b]; },
      [&](std::size_t a, std::size_t b) { return path_distance(g, seq[a], seq[b]).value; }, params.window, radius);
}

// -------------------------------------------------------------- FlowMap

namespace {

// path_distance between phi_a[s, T] and phi_b[s, T] without copying paths.
double tail_distance(const Skeleton& sk, std::int64_t s, std::size_t a, std::size_t b) {
  const auto& g = sk.graph();
  const double dt = sk.dt();
  const std::int64_t T = sk.horizon_step();
  double total = 0, running = 0;
  std::int64_t done = s - 1;
  for (int n = 1; n <= kDefaultDistanceTerms; ++n) {
    const auto hi = std::min<std::int64_t>(T, static_cast<std::int64_t>(std::floor(n / dt + 1e-9)));
    const std::int64_t upto = std::max(hi, s);
    for (std::int64_t k = done + 1; k <= upto; ++k) {
      running = std::max(running, g.distance(sk.point(a, k), sk.point(b, k)));
    }
    done = std::max(done, upto);
    total += std::ldexp(std::min(1.0, running), -n);
  }
  return total;
}

}  // namespace

FlowMap::FlowMap(std::shared_ptr<const Skeleton> sk, std::optional<EpsilonSchedule> schedule, SelectorParams params)
    : sk_(std::move(sk)), params_(params) {
  if (!sk_) throw std::invalid_argument("FlowMap needs a skeleton");
  schedule_ = schedule ? *schedule : EpsilonSchedule{sk_->space_step()};
}

std::vector<std::size_t> FlowMap::approximating_indices(std::int64_t s, const GraphPoint& x) const {
  const auto occ = sk_->occupants(s);
  if (occ.empty()) throw DensityViolation("no skeleton entry alive at the query time", kInfinity);
  const auto& g = sk_->graph();
  std::vector<std::pair<double, std::uint32_t>> by_dist;
  by_dist.reserve(occ.size());
  for (const auto& o : occ) by_dist.emplace_back(g.distance(o.point, x), o.min_index);
  std::sort(by_dist.begin(), by_dist.end());
  std::vector<std::uint32_t> prefix_min(by_dist.size());
  for (std::size_t i = 0; i < by_dist.size(); ++i) {
    prefix_min[i] = i == 0 ? by_dist[i].second : std::min(prefix_min[i - 1], by_dist[i].second);
  }
  std::vector<std::size_t> seq;
  const int last = schedule_.floor_index() + std::max(1, params_.window) - 1;
  for (int k = 1; k <= last; ++k) {
    const double eps = schedule_(k);
    const auto count = static_cast<std::size_t>(
        std::lower_bound(by_dist.begin(), by_dist.end(), std::make_pair(eps, std::uint32_t{0})) - by_dist.begin());
    if (count == 0) {
      if (k == 1) {
        std::ostringstream os;
        os << "density violation: nearest skeleton point at distance " << by_dist.front().first;
        throw DensityViolation(os.str(), by_dist.front().first);
      }
      break;
    }
    seq.push_back(prefix_min[count - 1]);
  }
  return seq;
}

Selection FlowMap::compute(std::int64_t s, const GraphPoint& x) const {
  const auto seq = approximating_indices(s, x);
  Selection sel;
  sel.sequence_length = seq.size();
  // n_k values are minimal indices of occupied points, so equal indices
  // mean equal points at s, hence equal tails by exact coalescence.
  auto same = [&](std::size_t a, std::size_t b) { return seq[a] == seq[b]; };
  auto dist = [&](std::size_t a, std::size_t b) { return tail_distance(*sk_, s, seq[a], seq[b]); };
  const double radius =
      params_.cluster_radius > 0 ? params_.cluster_radius : 2 * schedule_(static_cast<int>(seq.size()));
  const std::size_t pos = select_limit_index(seq.size(), same, dist, params_.window, radius);
  sel.entry = seq[pos];
  const auto w = static_cast<std::size_t>(std::max(1, params_.window));
  if (seq.size() >= w && pos == seq.size() - w) sel.stabilized_at = static_cast<int>(pos) + 1;
  return sel;
}

Selection FlowMap::select(std::int64_t s, const GraphPoint& x) const {
  const Key key{s, x};
  {
    std::shared_lock lock(mu_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  }
  const Selection sel = compute(s, x);
  std::unique_lock lock(mu_);
  memo_.emplace(key, sel);
  return sel;
}

GraphPoint FlowMap::value(std::int64_t s, std::int64_t t, const GraphPoint& x) const {
  if (t < s) throw std::invalid_argument("theta requires s <= t");
  if (t > sk_->horizon_step()) throw std::out_of_range("query beyond the skeleton horizon");
  if (t == s) return x;
  return sk_->point(select(s, x).entry, t);
}

Path FlowMap::trajectory(std::int64_t s, const GraphPoint& x) const {
  if (s > sk_->horizon_step()) throw std::out_of_range("query beyond the skeleton horizon");
  std::vector<GraphPoint> samples{x};
  if (s < sk_->horizon_step()) {
    const std::size_t n = select(s, x).entry;
    for (std::int64_t k = s + 1; k <= sk_->horizon_step(); ++k) samples.push_back(sk_->point(n, k));
  }
  return Path(s, sk_->dt(), std::move(samples));
}

// ---------------------------------------------------------- ClosedShell

ClosedShell ClosedShell::none() { return ClosedShell{}; }

ClosedShell ClosedShell::zero_level(double tol) {
  ClosedShell f;
  f.kind_ = Kind::kVertex;
  f.tol_ = tol;
  f.regular_ = true;
  return f;
}

ClosedShell ClosedShell::levels(std::vector<GraphPoint> centers, double tol, bool regular) {
  ClosedShell f;
  f.kind_ = Kind::kLevels;
  f.centers_ = std::move(centers);
  f.tol_ = tol;
  f.regular_ = regular;
  return f;
}

ClosedShell ClosedShell::from_json(const nlohmann::json& j, const MetricGraph& g) {
  const std::string kind = j.value("kind", std::string("levels"));
  const double tol = j.value("tolerance", 0.0);
  if (tol < 0) throw std::invalid_argument("shell tolerance must be non-negative");
  if (kind == "none") return none();
  if (kind == "zero-level") return zero_level(tol);
  if (kind != "levels") throw std::invalid_argument("unknown shell kind " + kind);
  std::vector<GraphPoint> centers;
  for (const auto& c : j.at("levels")) {
    if (c.is_number()) {
      centers.push_back(g.from_signed(c.get<double>()));
    } else if (c.contains("vertex")) {
      centers.push_back(g.vertex_point(c["vertex"].get<int>()));
    } else {
      centers.push_back(g.point(g.edge_index(c.at("edge").is_string() ? c["edge"].get<std::string>()
                                                                      : std::to_string(c["edge"].get<int>())),
                                c.at("coord").get<double>()));
    }
  }
  return levels(std::move(centers), tol, j.value("regular", false));
}

ClosedShell ClosedShell::parse(const std::string& spec, const MetricGraph& g) {
  if (spec == "none") return none();
  if (spec == "zero-level") return zero_level();
  const std::string prefix = "custom:";
  if (spec.rfind(prefix, 0) == 0) {
    std::ifstream in(spec.substr(prefix.size()));
    if (!in) throw std::invalid_argument("cannot open shell file " + spec.substr(prefix.size()));
    return from_json(nlohmann::json::parse(in), g);
  }
  throw std::invalid_argument("shell must be none, zero-level or custom:<file>");
}

double ClosedShell::distance(const MetricGraph& g, std::int64_t step, const GraphPoint& y) const {
  if (contains(g, step, y)) return 0.0;
  switch (kind_) {
    case Kind::kNone:
      return kInfinity;
    case Kind::kVertex:
      return std::max(0.0, g.distance_to_other_vertices(y) - tol_);
    case Kind::kLevels: {
      double best = kInfinity;
      for (const auto& c : centers_) best = std::min(best, std::max(0.0, g.distance(c, y) - tol_));
      return best;
    }
  }
  return kInfinity;
}

bool ClosedShell::contains(const MetricGraph& g, std::int64_t, const GraphPoint& y) const {
  switch (kind_) {
    case Kind::kNone:
      return false;
    case Kind::kVertex:
      if (y.on_vertex()) return true;
      return tol_ > 0 && g.distance_to_other_vertices(y) <= tol_;
    case Kind::kLevels:
      for (const auto& c : centers_) {
        if (g.distance(c, y) <= tol_) return true;
      }
      return false;
  }
  return false;
}

std::string ClosedShell::describe() const {
  switch (kind_) {
    case Kind::kNone: return "none";
    case Kind::kVertex: return "zero-level";
    case Kind::kLevels: return "custom";
  }
  return "?";
}

// ---------------------------------------------------------- RepairedFlow

nlohmann::json RepairTrace::to_json(const Skeleton& sk) const {
  const auto& g = sk.graph();
  auto point_json = [&](const GraphPoint& p) {
    if (g.is_line()) return nlohmann::json(g.to_signed(p));
    nlohmann::json j;
    cflow::to_json(j, p);
    return j;
  };
  nlohmann::json j;
  j["s"] = sk.grid().time(s);
  j["x"] = point_json(x);
  j["sigma"] = nlohmann::json::array();
  for (auto v : sigma) j["sigma"].push_back(v == kNever ? nlohmann::json(nullptr) : nlohmann::json(sk.grid().time(v)));
  j["z"] = nlohmann::json::array();
  for (const auto& p : z) j["z"].push_back(point_json(p));
  j["k"] = k;
  j["capped"] = capped;
  return j;
}

RepairedFlow::RepairedFlow(const FlowMap& theta, ClosedShell shell, int k_cap)
    : theta_(theta), shell_(std::move(shell)), k_cap_(k_cap) {
  if (k_cap < 3) throw std::invalid_argument("k_cap must be at least 3");
}

RepairTrace RepairedFlow::trace(std::int64_t s, const GraphPoint& x) const {
  const Skeleton& sk = theta_.skeleton();
  const auto& g = sk.graph();
  RepairTrace tr;
  tr.s = s;
  tr.x = x;
  tr.sigma.push_back(s);
  tr.z.push_back(x);
  for (int k = 0;; ++k) {
    if (k >= k_cap_) {
      tr.capped = true;
      tr.k = k_cap_;
      return tr;
    }
    const std::int64_t sk_k = tr.sigma[static_cast<std::size_t>(k)];
    const GraphPoint zk = tr.z[static_cast<std::size_t>(k)];
    std::int64_t next = kNever;
    GraphPoint zn = x;
    if (sk_k != kNever) {
      if (shell_.regular() && shell_.contains(g, sk_k, zk)) {
        next = sk_k;
        zn = zk;
      } else if (!shell_.empty() && sk_k < sk.horizon_step()) {
        const std::size_t n = theta_.select(sk_k, zk).entry;
        for (std::int64_t t = sk_k + 1; t <= sk.horizon_step(); ++t) {
          const auto& p = sk.point(n, t);
          if (shell_.contains(g, t, p)) {
            next = t;
            zn = p;
            break;
          }
        }
      }
    }
    tr.sigma.push_back(next);
    tr.z.push_back(zn);
    if (next == sk_k) {
      tr.k = k;
      return tr;
    }
  }
}

GraphPoint RepairedFlow::value(std::int64_t s, std::int64_t t, const GraphPoint& x) const {
  if (t < s) throw std::invalid_argument("psi requires s <= t");
  const RepairTrace tr = trace(s, x);
  const std::size_t last = static_cast<std::size_t>(tr.k);
  for (std::size_t k = 0; k < last; ++k) {
    if (tr.sigma[k] <= t && t < tr.sigma[k + 1]) return theta_.value(tr.sigma[k], t, tr.z[k]);
  }
  // Stabilized (or capped): follow theta from the last finite anchor.
  std::size_t k = last;
  while (k > 0 && (tr.sigma[k] == kNever || tr.sigma[k] > t)) --k;
  return theta_.value(tr.sigma[k], t, tr.z[k]);
}

Path RepairedFlow::trajectory(std::int64_t s, const GraphPoint& x) const {
  const Skeleton& sk = theta_.skeleton();
  std::vector<GraphPoint> samples;
  for (std::int64_t t = s; t <= sk.horizon_step(); ++t) samples.push_back(value(s, t, x));
  return Path(s, sk.dt(), std::move(samples));
}

// ------------------------------------------------------------ verifiers

StrongFlowReport verify_strong_flow(const MetricGraph& g, const FlowProvider& psi, std::span<const FlowQuery> queries,
                                    int threads) {
  std::vector<double> residual(queries.size(), 0.0);
  parallel_for(queries.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& q = queries[i];
      if (!(q.s <= q.t && q.t <= q.u)) throw std::invalid_argument("queries need s <= t <= u");
      const GraphPoint y = psi(q.s, q.t, q.x);
      residual[i] = g.distance(psi(q.t, q.u, y), psi(q.s, q.u, q.x));
    }
  });
  StrongFlowReport rep;
  rep.evaluated = queries.size();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    rep.max_residual = std::max(rep.max_residual, residual[i]);
    if (residual[i] > 0) rep.violations.push_back(FlowViolation{queries[i], residual[i]});
  }
  return rep;
}

StrongFlowReport verify_strong_flow(const MetricGraph& g, const FlowProvider& psi,
                                    std::span<const std::array<std::int64_t, 3>> triples,
                                    std::span<const GraphPoint> points, int threads) {
  std::vector<FlowQuery> qs;
  qs.reserve(triples.size() * points.size());
  for (const auto& tr : triples) {
    for (const auto& x : points) qs.push_back(FlowQuery{tr[0], tr[1], tr[2], x});
  }
  return verify_strong_flow(g, psi, qs, threads);
}

std::vector<FlowQuery> sample_flow_queries(const Skeleton& sk, std::size_t count, std::uint64_t seed) {
  const CounterRng rng(seed);
  const auto& w = sk.window();
  const std::int64_t s_lo = std::max(sk.start_step(0), sk.grid().step_floor(w.t_min));
  const std::int64_t s_hi = std::max(s_lo, std::min(sk.horizon_step(), sk.grid().step_floor(w.t_max)));
  const std::int64_t T = sk.horizon_step();
  auto pick = [](double u, std::int64_t lo, std::int64_t hi) {
    return lo + std::min(hi - lo, static_cast<std::int64_t>(u * static_cast<double>(hi - lo + 1)));
  };
  const double q = kSpaceQuantum;
  std::vector<FlowQuery> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto b0 = rng.block(StreamTag::kSampling, 0, i);
    const auto b1 = rng.block(StreamTag::kSampling, 1, i);
    auto unit = [](std::uint32_t v) { return (static_cast<double>(v) + 0.5) * 0x1p-32; };
    FlowQuery fq;
    fq.s = pick(unit(b0[0]), s_lo, s_hi);
    std::int64_t a = pick(unit(b0[1]), fq.s, T), b = pick(unit(b0[2]), fq.s, T);
    if (a > b) std::swap(a, b);
    fq.t = a;
    fq.u = b;
    GraphPoint x = w.box.random_point(sk.graph(), unit(b1[0]), unit(b1[1]));
    if (!x.on_vertex()) x = sk.graph().point(x.edge, std::max(q, quantize(x.coord, q)));
    fq.x = x;
    out.push_back(fq);
  }
  return out;
}

StoppingRule first_hit_of_level(const MetricGraph& g, double level) {
  if (g.is_line()) {
    return [&g, level](const Path& p) -> std::optional<std::int64_t> {
      double prev = g.to_signed(p.samples().front()) - level;
      if (prev == 0) return p.start_step();
      for (std::int64_t k = p.start_step() + 1; k <= p.end_step(); ++k) {
        const double cur = g.to_signed(p.at_step(k)) - level;
        if (cur == 0 || (cur > 0) != (prev > 0)) return k;
        prev = cur;
      }
      return std::nullopt;
    };
  }
  return [](const Path& p) -> std::optional<std::int64_t> {
    for (std::int64_t k = p.start_step(); k <= p.end_step(); ++k) {
      if (p.at_step(k).on_vertex()) return k;
    }
    return std::nullopt;
  };
}

std::optional<double> stopping_time_consistency(const FlowMap& flow, std::int64_t s, const GraphPoint& x,
                                                const StoppingRule& rule) {
  const Path traj = flow.trajectory(s, x);
  const auto sigma = rule(traj);
  if (!sigma) return std::nullopt;
  const Path restart = flow.trajectory(*sigma, traj.at_step(*sigma));
  const auto& g = flow.skeleton().graph();
  double worst = 0;
  for (std::int64_t k = *sigma; k <= traj.end_step(); ++k) {
    worst = std::max(worst, g.distance(restart.at_step(k), traj.at_step(k)));
  }
  return worst;
}

std::vector<std::size_t> uncovered_bifurcations(const Skeleton& sk, const ClosedShell& shell,
                                                const BifurcationReport& report) {
  std::vector<std::size_t> out;
  for (std::size_t i : report.flagged) {
    const auto& smp = report.samples[i];
    if (shell.distance(sk.graph(), smp.s, smp.x) > report.cluster_tol) out.push_back(i);
  }
  return out;
}

}  // namespace cflow
