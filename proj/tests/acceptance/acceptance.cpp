// Acceptance runner. `acceptance <id>...` runs the named criteria (all when
// none are given) and prints one [PASS]/[FAIL] line per criterion.
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cflow/estimators.hpp"
#include "cflow/flow_extension.hpp"
#include "cflow/parallel.hpp"
#include "cflow/sde_flows.hpp"
#include "cflow/serialization.hpp"

using namespace cflow;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

constexpr int kSeeds = 10;

std::vector<FlowKind> all_kinds() {
  return {FlowKind::coalescing_bm(), FlowKind::walsh({1.0 / 3, 1.0 / 3, 1.0 / 3}), FlowKind::tanaka(),
          FlowKind::skew(0.5), FlowKind::tanaka_star({0.25, 0.25, 0.5}, 1)};
}

std::vector<FlowKind> repair_kinds() { return {FlowKind::tanaka(), FlowKind::skew(-0.5), FlowKind::skew(0.5)}; }

std::string label(const FlowKind& k) {
  return k.type == FlowType::kSkewBM ? "skew(" + format_double(k.beta) + ")" : k.name();
}

std::shared_ptr<const Skeleton> skeleton(const FlowKind& kind, std::uint64_t seed) {
  const SimulationConfig cfg;  // dt = 1e-3
  const auto g = kind.graph();
  return std::make_shared<const Skeleton>(simulate(kind, g, net_starts(kind, g, cfg), seed, cfg));
}

FlowProvider provider_of(const FlowMap& theta) {
  return [&theta](std::int64_t s, std::int64_t t, const GraphPoint& x) { return theta.value(s, t, x); };
}
FlowProvider provider_of(const RepairedFlow& psi) {
  return [&psi](std::int64_t s, std::int64_t t, const GraphPoint& x) { return psi.value(s, t, x); };
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

Outcome c01() {
  Outcome o;
  std::size_t min_entries = SIZE_MAX;
  for (const auto& kind : all_kinds()) {
    int passed = 0;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      const auto sk = skeleton(kind, seed);
      min_entries = std::min(min_entries, sk->size());
      const auto rep = check_axioms(*sk);
      if (rep.pass() && sk->size() >= 100) ++passed;
    }
    o.pass = o.pass && passed == kSeeds;
    o.detail += label(kind) + " " + std::to_string(passed) + "/" + std::to_string(kSeeds) + "; ";
  }
  o.detail += "min entries " + std::to_string(min_entries) + " (need >= 100), eta 0.05, eps {0.5,0.25,0.125}";
  return o;
}

Outcome c02() {
  Outcome o;
  std::size_t anchor_bad = 0, preserve_bad = 0, checked = 0;
  for (const auto& kind : all_kinds()) {
    for (int seed = 1; seed <= kSeeds; ++seed) {
      const auto sk = skeleton(kind, seed);
      const FlowMap theta(sk);
      for (const auto& q : sample_flow_queries(*sk, 1000, 100 + seed)) {
        if (!(theta.value(q.s, q.s, q.x) == q.x)) ++anchor_bad;
      }
      const CounterRng rng(200 + seed);
      for (std::uint64_t i = 0; i < 1000; ++i) {
        const auto n = std::min(sk->size() - 1, static_cast<std::size_t>(rng.uniform(StreamTag::kTrial, 0, i) *
                                                                         static_cast<double>(sk->size())));
        const std::int64_t s0 = sk->start_step(n), T = sk->horizon_step();
        const std::int64_t s = s0 + static_cast<std::int64_t>(rng.uniform(StreamTag::kTrial, 1, i) *
                                                               static_cast<double>(T - s0 + 1));
        const std::int64_t t = s + static_cast<std::int64_t>(rng.uniform(StreamTag::kTrial, 2, i) *
                                                              static_cast<double>(T - s + 1));
        if (!(theta.value(s, t, sk->point(n, s)) == sk->point(n, t))) ++preserve_bad;
        ++checked;
      }
    }
  }
  o.pass = anchor_bad == 0 && preserve_bad == 0;
  o.detail = "theta_ss(x) != x: " + std::to_string(anchor_bad) + ", theta_st(phi_n(s)) != phi_n(t): " +
             std::to_string(preserve_bad) + " of " + std::to_string(checked) + " (tolerance 0)";
  return o;
}

Outcome c03() {
  Outcome o;
  for (const auto& kind : {FlowKind::coalescing_bm(), FlowKind::walsh({1.0 / 3, 1.0 / 3, 1.0 / 3})}) {
    double worst = 0;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      const auto sk = skeleton(kind, seed);
      const FlowMap theta(sk);
      const auto qs = sample_flow_queries(*sk, 10000, 300 + seed);
      worst = std::max(worst, verify_strong_flow(sk->graph(), provider_of(theta), qs).max_residual);
    }
    o.pass = o.pass && worst == 0;
    o.detail += label(kind) + " max residual " + fmt(worst) + "; ";
  }
  o.detail += "10 seeds x 1e4 queries, tolerance 0";
  return o;
}

Outcome c04a() {
  Outcome o;
  for (const auto& kind : repair_kinds()) {
    int seeds_with_violation = 0;
    std::size_t violations = 0;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      const auto sk = skeleton(kind, seed);
      const FlowMap theta(sk);
      const auto qs = sample_flow_queries(*sk, 10000, 400 + seed);
      const auto rep = verify_strong_flow(sk->graph(), provider_of(theta), qs);
      violations += rep.violations.size();
      if (!rep.violations.empty()) ++seeds_with_violation;
    }
    o.pass = o.pass && seeds_with_violation >= 9;
    o.detail += label(kind) + " seeds with a nonzero theta residual " + std::to_string(seeds_with_violation) +
                "/10 (" + std::to_string(violations) + " violations); ";
  }
  o.detail += "need >= 9/10 seeds";
  return o;
}

Outcome c04b() {
  Outcome o;
  for (const auto& kind : repair_kinds()) {
    double worst = 0;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      const auto sk = skeleton(kind, seed);
      const FlowMap theta(sk);
      const RepairedFlow psi(theta, ClosedShell::zero_level());
      const auto qs = sample_flow_queries(*sk, 10000, 400 + seed);
      worst = std::max(worst, verify_strong_flow(sk->graph(), provider_of(psi), qs).max_residual);
    }
    o.pass = o.pass && worst == 0;
    o.detail += label(kind) + " psi max residual " + fmt(worst) + "; ";
  }
  o.detail += "shell {x = 0}, 10 seeds x 1e4 queries, tolerance 0";
  return o;
}

Outcome c04c() {
  Outcome o;
  for (const auto& kind : repair_kinds()) {
    int max_k = 0;
    std::size_t over = 0, total = 0;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      const auto sk = skeleton(kind, seed);
      const FlowMap theta(sk);
      const RepairedFlow psi(theta, ClosedShell::zero_level());
      for (const auto& q : sample_flow_queries(*sk, 10000, 500 + seed)) {
        const auto tr = psi.trace(q.s, q.x);
        max_k = std::max(max_k, tr.k);
        if (tr.k > 2 || tr.capped) ++over;
        ++total;
      }
    }
    o.pass = o.pass && over == 0;
    o.detail += label(kind) + " max k " + std::to_string(max_k) + ", k > 2 in " + std::to_string(over) + "/" +
                std::to_string(total) + "; ";
  }
  o.detail += "need k <= 2 for 100%";
  return o;
}

Outcome c05() {
  Outcome o;
  for (const auto& kind : {FlowKind::coalescing_bm(), FlowKind::tanaka()}) {
    double worst = 0;
    std::size_t stopped = 0, total = 0;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      const auto sk = skeleton(kind, seed);
      const FlowMap theta(sk);
      const auto rule = first_hit_of_level(sk->graph());
      for (const auto& q : sample_flow_queries(*sk, 1000, 600 + seed)) {
        ++total;
        if (const auto r = stopping_time_consistency(theta, q.s, q.x, rule)) {
          ++stopped;
          worst = std::max(worst, *r);
        }
      }
    }
    o.pass = o.pass && worst == 0 && stopped > 0;
    o.detail += label(kind) + " restart residual " + fmt(worst) + " over " + std::to_string(stopped) + "/" +
                std::to_string(total) + " stopped samples; ";
  }
  o.detail += "tolerance 0";
  return o;
}

Outcome c06() {
  const auto g = MetricGraph::line();
  const double oracle = std::erfc(0.5);  // 2(1 - Phi(1/sqrt 2))
  auto rep = estimate_meeting_probability(FlowKind::coalescing_bm(), g, g.from_signed(0), g.from_signed(1), 1.0,
                                          100000, 1);
  const double err = std::abs(rep.estimate - oracle);
  return {err <= 0.02, "p_hat " + fmt(rep.estimate) + " vs " + fmt(oracle) + ", |diff| " + fmt(err) +
                           " (tolerance 0.02, N = 1e5)"};
}

Outcome c07() {
  Outcome o;
  double worst = 1;
  std::string where;
  for (int d : {3, 5}) {
    const FlowKind kind = FlowKind::walsh(std::vector<double>(static_cast<std::size_t>(d), 1.0 / d));
    const auto g = kind.graph();
    // Vertex, two radii on one edge, and points on two further edges.
    const std::vector<GraphPoint> pts{g.vertex_point(0), g.star_point(0, 0.5), g.star_point(0, 1.0),
                                      g.star_point(1, 1.0), g.star_point(2, 0.5)};
    std::uint64_t seed = 700;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t j = 0; j < pts.size(); ++j) {
        const auto rep = estimate_meeting_probability(kind, g, pts[i], pts[j], 2.0, 10000, ++seed);
        if (rep.ci.lo < worst) {
          worst = rep.ci.lo;
          where = "d=" + std::to_string(d) + " pair (" + std::to_string(i) + "," + std::to_string(j) + ")";
        }
      }
    }
  }
  o.pass = worst >= 0.02;
  o.detail = "min lower CI " + fmt(worst) + " at " + where + " (need >= 0.02, N = 1e4); ";
  const auto g3 = MetricGraph::star({1.0 / 3, 1.0 / 3, 1.0 / 3});
  std::uint64_t seed = 800;
  for (double lambda : {0.5, 2.0}) {
    for (const auto& x : {g3.vertex_point(0), g3.star_point(0, 1.0)}) {
      const auto rep = scaling_check_walsh(g3, lambda, x, 1.0, 10000, ++seed);
      const double thr = ks_threshold(rep.samples, rep.samples);
      o.pass = o.pass && rep.estimate < thr;
      o.detail += "KS(lambda=" + fmt(lambda) + ", |x|=" + fmt(x.on_vertex() ? 0.0 : x.coord) + ") " +
                  fmt(rep.estimate) + " < " + fmt(thr) + "; ";
    }
  }
  return o;
}

Outcome c08() {
  Outcome o;
  const auto cbm = FlowKind::coalescing_bm();
  const auto pc = certify_property_p(cbm, 0, 1, 1.0, 5, 10000, 2);
  const CoalescenceOptions copt{1e-5, 1.0, 1};
  o.detail = "C=" + fmt(pc.C) + " p=" + fmt(pc.p) + " C2=" + fmt(pc.C2()) + "; ";
  for (int m : {4, 8}) {
    const auto rep = estimate_coalescence_time(cbm, 32, m, 0, 1, 10000, 3, pc, copt);
    o.pass = o.pass && rep.verdict == Verdict::kPass;
    o.detail += "E[sigma^32_" + std::to_string(m) + "] upper " + fmt(rep.ci.hi) + " <= " + fmt(rep.target) + "; ";
  }
  int tails_ok = 0, tails = 0;
  for (const auto& rep : geometric_tail_check(cbm, 32, 0, 1, 5, 10000, 4, pc, copt)) {
    ++tails;
    if (rep.verdict == Verdict::kPass) ++tails_ok;
  }
  o.pass = o.pass && tails > 0 && tails_ok == tails;
  o.detail += "tails " + std::to_string(tails_ok) + "/" + std::to_string(tails) + " within (1-p)^j; ";
  for (const auto& kind : {cbm, FlowKind::tanaka()}) {
    const auto curve = distinct_points_curve(kind, 100, 0, 1, {0.01, 0.1, 1.0}, 20, 5);
    std::string means;
    for (std::size_t i = 0; i + 1 < curve.size(); ++i) means += (i ? "," : "") + fmt(curve[i].estimate);
    const bool dec = !curve.empty() && curve.back().verdict == Verdict::kPass;
    o.pass = o.pass && dec;
    o.detail += label(kind) + " distinct means {" + means + "} " + (dec ? "decreasing" : "not decreasing") + "; ";
  }
  return o;
}

Outcome c09() {
  Outcome o;
  const std::vector<double> ladder{0.125, 0.0625, 0.03125, 0.015625, 0.0078125};
  for (const auto& kind : all_kinds()) {
    const auto g = kind.graph();
    std::vector<GraphPoint> xs;
    if (g.is_line()) {
      for (double v : {-0.5, -0.25, 0.0, 0.25, 0.5}) xs.push_back(g.from_signed(v));
    } else {
      xs.push_back(g.vertex_point(0));
      for (int e = 0; e < static_cast<int>(g.edge_count()); ++e) xs.push_back(g.star_point(e, 0.25));
    }
    const auto curve = small_time_exit_curve(kind, g, xs, 0.5, ladder, 10000, 6, 0.1);
    const double first = curve.front().estimate, last = curve[ladder.size() - 1].estimate;
    const bool ok = curve.back().verdict == Verdict::kPass;
    o.pass = o.pass && ok;
    o.detail += label(kind) + " " + fmt(last) + "/" + fmt(first) + "; ";
  }
  o.detail += "ratio at 2^-7 over ratio at 2^-3 < 10%, r = 0.5";
  return o;
}

Outcome c10() {
  Outcome o;
  double worst = 0;
  std::size_t particles = 0;
  const SimulationConfig cfg;
  const auto line = MetricGraph::line();
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const auto sk = skeleton(FlowKind::tanaka(), seed);
    const auto W = common_brownian_path(CounterRng(seed), cfg);
    for (std::size_t n = 0; n < sk->size(); ++n) {
      ++particles;
      std::int64_t k = sk->start_step(n);
      while (k <= sk->horizon_step() && !sk->point(n, k).on_vertex()) ++k;
      if (k > sk->horizon_step()) continue;
      double low = W[static_cast<std::size_t>(k)];
      for (; k <= sk->horizon_step(); ++k) {
        low = std::min(low, W[static_cast<std::size_t>(k)]);
        const double lhs = std::abs(line.to_signed(sk->point(n, k)));
        worst = std::max(worst, std::abs(lhs - (W[static_cast<std::size_t>(k)] - low)));
      }
    }
  }
  o.pass = worst < 1e-12;
  o.detail = "Tanaka |X| identity max error " + fmt(worst) + " over " + std::to_string(particles) +
             " particles (need < 1e-12); ";

  const auto kind = FlowKind::tanaka_star({0.25, 0.25, 0.5}, 1);
  const double h = lattice_step(cfg.dt);
  const double beta = kind.star_beta();
  std::size_t mismatches = 0, checked = 0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const CounterRng noise(seed);
    const auto sk = skeleton(kind, seed);
    const auto& g = sk->graph();
    const FlowMap theta(sk);
    const RepairedFlow psi(theta, ClosedShell::zero_level());
    const CounterRng pick(900 + seed);
    for (std::uint64_t i = 0; i < 200; ++i) {
      const auto n = std::min(sk->size() - 1, static_cast<std::size_t>(pick.uniform(StreamTag::kTrial, 0, i) *
                                                                       static_cast<double>(sk->size())));
      const std::int64_t s0 = sk->start_step(n), T = sk->horizon_step();
      const std::int64_t s = s0 + static_cast<std::int64_t>(pick.uniform(StreamTag::kTrial, 1, i) *
                                                             static_cast<double>(T - s0 + 1));
      const GraphPoint x = sk->point(n, s);
      const Path p = psi.trajectory(s, x);
      // Y_{s,.}(G(x)) from the lattice recursion of the skew walk.
      auto y = static_cast<std::int64_t>(std::llround(tanaka_star_projection(g, 1, x) / h));
      for (std::int64_t k = s; k <= T; ++k) {
        ++checked;
        if (tanaka_star_projection(g, 1, p.at_step(k)) != static_cast<double>(y) * h) ++mismatches;
        y += y == 0 ? lattice_zero_step(noise, k, beta) : lattice_common_step(noise, k);
      }
    }
  }
  o.pass = o.pass && mismatches == 0;
  o.detail += "star conjugation G(psi) != Y(G) at " + std::to_string(mismatches) + "/" + std::to_string(checked) +
              " grid times (tolerance 0)";
  return o;
}

#ifdef CFLOW_CLI_PATH
namespace fs = std::filesystem;

// Runs inside `dir` so relative paths echoed into reports match across runs.
int run_cli(const std::string& args, int threads, const fs::path& dir, const std::string& log) {
  const std::string cmd = "cd " + dir.string() + " && " + std::string(kThreadsEnv) + "=" + std::to_string(threads) + " " + CFLOW_CLI_PATH + " " +
                          args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string dir_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.filename().string() + "\n" + read_text_file(f);
  return all;
}

Outcome c11() {
  const fs::path root = fs::temp_directory_path() / "cflow_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  struct Step {
    std::string name;
    std::function<std::string(int)> args;
  };
  const std::vector<Step> steps{
      {"simulate", [](int) { return std::string("simulate --flow tanaka --seed 11 --out sim"); }},
      {"verify",
       [](int th) {
         return "verify --skeleton sim --shell zero-level --samples 10000 --threads " +
                std::to_string(th) + " --out verify";
       }},
      {"verify-none",
       [](int th) {
         return "verify --skeleton sim --shell none --samples 10000 --threads " +
                std::to_string(th) + " --out verify_none";
       }},
      {"extend",
       [](int th) {
         return "extend --skeleton sim --shell zero-level --threads " + std::to_string(th) +
                " --out extend";
       }},
      {"estimate",
       [](int th) {
         return "estimate --task meeting --flow walsh --x 0:1 --y 1:1 --c 2 -N 20000 --at-least 0.02 --threads " +
                std::to_string(th) + " --out estimate";
       }},
  };
  std::map<std::string, std::pair<int, std::string>> reference;
  Outcome o;
  for (int th : {1, 2, 8}) {
    const fs::path d = root / ("t" + std::to_string(th));
    fs::create_directories(d);
    for (const auto& st : steps) {
      const int code = run_cli(st.args(th), th, d, st.name + ".log");
      const std::string out = st.name == "verify-none" ? "verify_none" : st.name == "simulate" ? "sim" : st.name;
      const std::string bytes = fs::exists(d / out) ? dir_bytes(d / out) : std::string();
      if (th == 1) {
        reference[st.name] = {code, bytes};
        o.detail += st.name + " exit " + std::to_string(code) + "; ";
        if (bytes.empty()) o.pass = false;
      } else if (reference[st.name] != std::make_pair(code, bytes)) {
        o.pass = false;
        o.detail += st.name + " differs at " + std::to_string(th) + " threads; ";
      }
    }
  }
  o.detail += "outputs and exit codes byte-identical across 1/2/8 threads: " + std::string(o.pass ? "yes" : "no");
  if (o.pass) fs::remove_all(root);
  return o;
}
#else
Outcome c11() { return {false, "command-line tool not built"}; }
#endif

const std::vector<std::pair<std::string, std::function<Outcome()>>> kCriteria{
    {"c01", c01}, {"c02", c02},   {"c03", c03}, {"c04a", c04a}, {"c04b", c04b}, {"c04c", c04c}, {"c05", c05},
    {"c06", c06}, {"c07", c07},   {"c08", c08}, {"c09", c09},   {"c10", c10},   {"c11", c11}};

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> ids(argv + 1, argv + argc);
  if (ids.empty()) {
    for (const auto& [id, fn] : kCriteria) ids.push_back(id);
  }
  bool all = true;
  for (const auto& id : ids) {
    const auto it = std::find_if(kCriteria.begin(), kCriteria.end(), [&](const auto& c) { return c.first == id; });
    if (it == kCriteria.end()) {
      std::cerr << "unknown criterion " << id << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = it->second();
    } catch (const std::exception& ex) {
      o = {false, std::string("error: ") + ex.what()};
    }
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << "  " << o.detail << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
