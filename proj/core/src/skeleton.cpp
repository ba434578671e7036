#include "cflow/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cflow {

Skeleton::Skeleton(MetricGraph graph, TimeGrid grid, std::vector<Path> paths, std::vector<MergeEvent> merges,
                   double space_step, SkeletonWindow window, nlohmann::json metadata)
    : graph_(std::move(graph)),
      grid_(grid),
      paths_(std::move(paths)),
      merges_(std::move(merges)),
      space_step_(space_step),
      window_(std::move(window)),
      metadata_(std::move(metadata)) {
  if (paths_.empty()) throw std::invalid_argument("skeleton needs at least one entry");
  for (std::size_t n = 0; n < paths_.size(); ++n) {
    const auto& p = paths_[n];
    if (p.dt() != grid_.dt) throw AlignmentError("skeleton entry on a different time grid");
    if (p.end_step() != grid_.horizon_step) throw AlignmentError("skeleton entry does not reach the horizon");
    if (n > 0 && p.start_step() < paths_[n - 1].start_step()) {
      throw std::invalid_argument("skeleton entries must be sorted by start time");
    }
  }
  parent_.resize(paths_.size());
  std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  parent_step_.assign(paths_.size(), 0);
  for (const auto& m : merges_) {
    if (m.absorbed >= paths_.size() || m.into >= m.absorbed || parent_[m.absorbed] != m.absorbed) {
      throw std::invalid_argument("malformed merge log");
    }
    parent_[m.absorbed] = m.into;
    parent_step_[m.absorbed] = m.step;
  }

  first_step_ = paths_.front().start_step();
  const auto steps = static_cast<std::size_t>(grid_.horizon_step - first_step_ + 1);
  occ_offset_.assign(steps + 1, 0);
  std::vector<std::uint32_t> order;
  for (std::size_t i = 0; i < steps; ++i) {
    const std::int64_t k = first_step_ + static_cast<std::int64_t>(i);
    const std::size_t active = active_count(k);
    order.resize(active);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      const auto& pa = paths_[a].at_step(k);
      const auto& pb = paths_[b].at_step(k);
      if (pa == pb) return a < b;
      return PointLess{}(pa, pb);
    });
    for (std::size_t j = 0; j < order.size(); ++j) {
      const auto& p = paths_[order[j]].at_step(k);
      if (j > 0 && occ_.back().point == p) {
        ++occ_.back().count;
      } else {
        occ_.push_back(Occupant{p, order[j], 1});
      }
    }
    occ_offset_[i + 1] = occ_.size();
  }
}

std::size_t Skeleton::active_count(std::int64_t step) const {
  const auto it = std::upper_bound(paths_.begin(), paths_.end(), step,
                                   [](std::int64_t s, const Path& p) { return s < p.start_step(); });
  return static_cast<std::size_t>(it - paths_.begin());
}

std::span<const Occupant> Skeleton::occupants(std::int64_t step) const {
  if (step < first_step_ || step > grid_.horizon_step) return {};
  const auto i = static_cast<std::size_t>(step - first_step_);
  return std::span<const Occupant>(occ_).subspan(occ_offset_[i], occ_offset_[i + 1] - occ_offset_[i]);
}

std::size_t Skeleton::class_min(std::size_t n, std::int64_t step) const {
  while (parent_.at(n) != n && parent_step_[n] <= step) n = parent_[n];
  return n;
}

bool AxiomReport::pass() const {
  return sk1.pass && sk2.pass &&
         std::all_of(sk3.begin(), sk3.end(), [](const Sk3Result& r) { return r.check.ok; });
}

nlohmann::json AxiomReport::to_json() const {
  nlohmann::json j;
  j["sk1"] = {{"pass", sk1.pass}};
  if (!sk1.pass) j["sk1"]["witness"] = {{"m", sk1.m}, {"n", sk1.n}, {"step", sk1.step}};
  nlohmann::json wp;
  cflow::to_json(wp, sk2.worst_point);
  j["sk2"] = {{"pass", sk2.pass}, {"covering_radius", sk2.covering_radius}, {"worst_t", sk2.worst_t},
              {"worst_point", wp}};
  j["sk3"] = nlohmann::json::array();
  for (const auto& r : sk3) {
    nlohmann::json e{{"eps", r.eps}, {"pass", r.check.ok}, {"alpha", r.check.alpha},
                     {"worst_modulus", r.check.worst_modulus}, {"sub_grid", r.check.sub_grid}};
    if (r.check.witness) {
      e["witness"] = {{"path", r.check.witness->path}, {"step_a", r.check.witness->step_a},
                      {"step_b", r.check.witness->step_b}, {"distance", r.check.witness->distance}};
    }
    j["sk3"].push_back(std::move(e));
  }
  j["pass"] = pass();
  return j;
}

namespace {

Sk1Result check_sk1(const Skeleton& sk) {
  Sk1Result out;
  std::vector<std::size_t> order;
  const std::int64_t first = sk.start_step(0);
  for (std::int64_t k = first; k < sk.horizon_step(); ++k) {
    const std::size_t active = sk.active_count(k);
    order.resize(active);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return PointLess{}(sk.point(a, k), sk.point(b, k));
    });
    for (std::size_t j = 1; j < order.size(); ++j) {
      const std::size_t m = order[j - 1], n = order[j];
      if (sk.point(m, k) == sk.point(n, k) && !(sk.point(m, k + 1) == sk.point(n, k + 1))) {
        out.pass = false;
        out.m = std::min(m, n);
        out.n = std::max(m, n);
        out.step = k;
        return out;
      }
    }
  }
  return out;
}

Sk2Result check_sk2(const Skeleton& sk, double eta, double spacing) {
  Sk2Result out;
  const auto& g = sk.graph();
  const auto pts = sk.window().box.sample(g, spacing);
  const double t0 = sk.window().t_min, t1 = sk.window().t_max;
  const auto nt = static_cast<long>(std::floor((t1 - t0) / spacing + 1e-9));
  for (long i = 0; i <= nt; ++i) {
    const double t = std::min(t1, t0 + static_cast<double>(i) * spacing);
    for (const auto& y : pts) {
      double best = kInfinity;
      for (std::size_t n = 0; n < sk.size(); ++n) {
        const double dtime = std::abs(sk.dt() * static_cast<double>(sk.start_step(n)) - t);
        if (dtime >= best) continue;
        best = std::min(best, std::max(dtime, g.distance(sk.start_point(n), y)));
      }
      if (best > out.covering_radius) {
        out.covering_radius = best;
        out.worst_t = t;
        out.worst_point = y;
      }
    }
  }
  out.pass = out.covering_radius <= eta;
  return out;
}

}  // namespace

AxiomReport check_axioms(const Skeleton& sk, const AxiomParams& params) {
  AxiomReport rep;
  rep.sk1 = check_sk1(sk);
  const double spacing = params.eval_spacing > 0 ? params.eval_spacing : params.eta / 4;
  rep.sk2 = check_sk2(sk, params.eta, spacing);
  const double C = sk.grid().horizon();
  for (double eps : params.eps_ladder) {
    rep.sk3.push_back(Sk3Result{eps, equicontinuity_check(sk.graph(), sk.paths(), C, eps)});
  }
  return rep;
}

namespace {

struct DistinctCount {
  std::size_t entries = 0;
  std::size_t distinct = 0;
};

DistinctCount distinct_in(const Skeleton& sk, std::int64_t s, std::int64_t t, const Region& K) {
  const auto& g = sk.graph();
  DistinctCount out;
  std::vector<GraphPoint> ends;
  for (const auto& occ : sk.occupants(s)) {
    const Path& p = sk.path(occ.min_index);
    bool inside = true;
    for (std::int64_t k = s; k <= t && inside; ++k) inside = K.contains(g, p.at_step(k));
    if (!inside) continue;
    out.entries += occ.count;
    ends.push_back(p.at_step(t));
  }
  std::sort(ends.begin(), ends.end(), PointLess{});
  out.distinct = static_cast<std::size_t>(std::unique(ends.begin(), ends.end()) - ends.begin());
  return out;
}

}  // namespace

std::size_t count_distinct(const Skeleton& sk, std::int64_t s, std::int64_t t, const Region& K) {
  if (t < s) throw std::invalid_argument("count_distinct requires s <= t");
  return distinct_in(sk, s, t, K).distinct;
}

IcpResult icp_check(const Skeleton& sk, std::int64_t s, std::int64_t t, std::span<const Region> compacts,
                    double cap_per_unit_length) {
  IcpResult out;
  if (t <= s) return out;
  for (std::size_t c = 0; c < compacts.size(); ++c) {
    const auto dc = distinct_in(sk, s, t, compacts[c]);
    const double cap = cap_per_unit_length * compacts[c].measure(sk.graph());
    const bool ok = dc.entries == 0 ||
                    (dc.distinct < dc.entries && static_cast<double>(dc.distinct) <= cap);
    if (!ok) return IcpResult{false, c, dc.entries, dc.distinct, cap};
  }
  return out;
}

BifurcationReport detect_bifurcations(const Skeleton& sk,
                                      std::span<const std::pair<std::int64_t, GraphPoint>> samples,
                                      const BifurcationParams& params) {
  const auto& g = sk.graph();
  const double tol = params.cluster_tol > 0 ? params.cluster_tol : 5 * std::sqrt(sk.dt());
  std::vector<double> ladder = params.eps_ladder;
  std::sort(ladder.begin(), ladder.end());
  BifurcationReport rep;
  rep.cluster_tol = tol;
  for (const auto& [s, x] : samples) {
    BifurcationSample out;
    out.s = s;
    out.x = x;
    const auto occ = sk.occupants(s);
    std::vector<std::size_t> reps;
    auto capture = [&](double eps) {
      reps.clear();
      for (const auto& o : occ) {
        if (g.distance(o.point, x) < eps) reps.push_back(o.min_index);
      }
      return reps.size();
    };
    bool found = false;
    for (double eps : ladder) {
      if (capture(eps) >= 2) {
        out.eps_used = eps;
        found = true;
        break;
      }
    }
    if (!found) {
      out.widened = true;
      double eps = ladder.empty() ? sk.space_step() : ladder.back();
      for (int i = 0; i < 64 && capture(eps) < 2; ++i) eps *= 2;
      out.eps_used = eps;
    }
    out.captured_paths = reps.size();

    std::vector<std::int64_t> ts;
    if (params.t_offsets.empty()) {
      for (std::int64_t o = 1; s + o <= sk.horizon_step(); o *= 2) ts.push_back(s + o);
    } else {
      for (auto o : params.t_offsets) {
        if (o > 0 && s + o <= sk.horizon_step()) ts.push_back(s + o);
      }
    }
    const std::size_t m = reps.size();
    std::vector<double> sup(m * m, 0.0), init(m * m, 0.0);
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = a + 1; b < m; ++b) init[a * m + b] = g.distance(sk.point(reps[a], s), sk.point(reps[b], s));
    }
    std::int64_t done = s - 1;
    for (std::int64_t t : ts) {
      for (std::int64_t k = done + 1; k <= t; ++k) {
        for (std::size_t a = 0; a < m; ++a) {
          for (std::size_t b = a + 1; b < m; ++b) {
            const double d = g.distance(sk.point(reps[a], k), sk.point(reps[b], k));
            sup[a * m + b] = std::max(sup[a * m + b], d);
          }
        }
      }
      done = t;
      // Single linkage: components of the graph joining paths within tol.
      std::vector<std::size_t> comp(m);
      std::iota(comp.begin(), comp.end(), std::size_t{0});
      auto find = [&](std::size_t i) {
        while (comp[i] != i) i = comp[i] = comp[comp[i]];
        return i;
      };
      for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a + 1; b < m; ++b) {
          if (sup[a * m + b] - init[a * m + b] <= tol) comp[find(b)] = find(a);
        }
      }
      std::size_t nu = 0;
      for (std::size_t a = 0; a < m; ++a) nu += find(a) == a;
      out.nu.emplace_back(t, nu);
      if (nu >= 2 && !out.tau) out.tau = t;
    }
    out.flagged = out.tau && *out.tau <= s + 1;
    if (out.flagged) rep.flagged.push_back(rep.samples.size());
    rep.samples.push_back(std::move(out));
  }
  return rep;
}

nlohmann::json BifurcationReport::to_json(const MetricGraph& g) const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json j{{"s", s.s}, {"eps_used", s.eps_used}, {"widened", s.widened},
                     {"captured_paths", s.captured_paths}, {"flagged", s.flagged}};
    if (g.is_line()) j["x"] = g.to_signed(s.x);
    else cflow::to_json(j["x"], s.x);
    j["tau"] = s.tau ? nlohmann::json(*s.tau) : nlohmann::json(nullptr);
    j["nu"] = nlohmann::json::array();
    for (const auto& [t, nu] : s.nu) j["nu"].push_back({t, nu});
    arr.push_back(std::move(j));
  }
  return arr;
}

double recent_start_net_radius(const Skeleton& sk, std::int64_t s, std::int64_t delta_steps,
                               const Region& box, double spacing) {
  const auto& g = sk.graph();
  std::vector<GraphPoint> pts;
  for (std::size_t n = 0; n < sk.active_count(s); ++n) {
    if (sk.start_step(n) > s - delta_steps) pts.push_back(sk.point(n, s));
  }
  if (pts.empty()) return kInfinity;
  double worst = 0;
  for (const auto& y : box.sample(g, spacing)) {
    double best = kInfinity;
    for (const auto& p : pts) best = std::min(best, g.distance(p, y));
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace cflow
