// coalesce_flow: simulate coalescing flows, extend skeletons to flow maps,
// verify flow properties and run Monte Carlo estimates.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cflow/estimators.hpp"
#include "cflow/flow_extension.hpp"
#include "cflow/parallel.hpp"
#include "cflow/sde_flows.hpp"
#include "cflow/serialization.hpp"
#include "cflow/skeleton.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cflow;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUsage = 2, kInconclusive = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cell.size()) throw UsageError("not a number: '" + cell + "'");
    out.push_back(v);
  }
  return out;
}

std::pair<double, double> parse_range(const std::string& s, const char* what) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw UsageError(std::string(what) + " must be lo:hi");
  const auto lo = parse_list(s.substr(0, colon)), hi = parse_list(s.substr(colon + 1));
  if (lo.size() != 1 || hi.size() != 1) throw UsageError(std::string(what) + " must be lo:hi");
  return {lo[0], hi[0]};
}

// "0.25" on a line; "vertex" or "<edge>:<r>" on a star.
GraphPoint parse_point(const MetricGraph& g, const std::string& s) {
  if (s == "vertex") return g.vertex_point(0);
  const auto colon = s.find(':');
  if (colon == std::string::npos) {
    if (!g.is_line()) throw UsageError("star points are 'vertex' or '<edge>:<r>'");
    const auto v = parse_list(s);
    if (v.size() != 1) throw UsageError("bad point '" + s + "'");
    return g.from_signed(v[0]);
  }
  const std::string e = s.substr(0, colon);
  const auto r = parse_list(s.substr(colon + 1));
  if (r.size() != 1) throw UsageError("bad point '" + s + "'");
  return g.point(g.edge_index(e), r[0]);
}

json point_json(const MetricGraph& g, const GraphPoint& p) {
  if (g.is_line()) return g.to_signed(p);
  json j;
  to_json(j, p);
  return j;
}

// --config FILE: a JSON object whose keys are option names. Its entries are
// spliced in before the command-line tokens, so explicit flags win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string file;
    std::size_t erase = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[i + 1];
      erase = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
      erase = 1;
    } else {
      continue;
    }
    std::ifstream in(file);
    if (!in) throw UsageError("cannot open config " + file);
    json cfg;
    try {
      cfg = json::parse(in);
    } catch (const json::exception& ex) {
      throw UsageError("config " + file + ": " + ex.what());
    }
    if (!cfg.is_object()) throw UsageError("config must be a JSON object");
    std::vector<std::string> tokens;
    for (const auto& [key, value] : cfg.items()) {
      std::string name = "--" + key;
      std::replace(name.begin(), name.end(), '_', '-');
      if (value.is_boolean()) {
        if (value.get<bool>()) tokens.push_back(name);
      } else if (value.is_array()) {
        std::string joined;
        for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
        tokens.push_back(name);
        tokens.push_back(joined);
      } else if (value.is_string()) {
        tokens.push_back(name);
        tokens.push_back(value.get<std::string>());
      } else if (value.is_number()) {
        tokens.push_back(name);
        tokens.push_back(value.dump());
      } else {
        throw UsageError("config key '" + key + "' has an unsupported value");
      }
    }
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + erase));
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin(), tokens.end());
    return args;
  }
  return args;
}

// ---------------------------------------------------------------- options

struct FlowOptions {
  std::string flow;
  std::string graph_file;
  std::string transmission;
  double beta = 0.0;
  int sign_split = 1;

  void add(CLI::App* app, bool required) {
    auto* o = app->add_option("--flow", flow, "coalescing-bm | walsh | tanaka | skew | tanaka-star");
    if (required) o->required();
    app->add_option("--graph", graph_file, "star graph JSON file (walsh, tanaka-star)");
    app->add_option("--transmission", transmission, "comma-separated edge weights for a star");
    app->add_option("--beta", beta, "skew parameter (skew)");
    app->add_option("--sign-split", sign_split, "edges [0, l) carry sign +1 (tanaka-star)");
  }

  std::pair<FlowKind, MetricGraph> resolve(double r_max) const {
    FlowKind kind;
    kind.type = FlowKind::parse_type(flow);
    kind.beta = beta;
    kind.sign_split = sign_split;
    std::optional<MetricGraph> g;
    if (!graph_file.empty()) {
      std::ifstream in(graph_file);
      if (!in) throw UsageError("cannot open graph file " + graph_file);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& ex) {
        throw UsageError("graph file " + graph_file + ": " + ex.what());
      }
      g = MetricGraph::from_json(j, r_max);
      if (kind.on_star()) {
        if (!g->is_star()) throw UsageError("flow " + flow + " needs a star graph");
        kind.transmission = g->vertex(0).transmission;
      } else if (!g->is_line()) {
        throw UsageError("flow " + flow + " runs on the line");
      }
    } else if (kind.on_star()) {
      kind.transmission = transmission.empty() ? std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3} : parse_list(transmission);
    }
    kind.validate();
    if (!g) g = kind.graph(r_max);
    return {kind, *g};
  }
};

struct GridOptions {
  double dt = 1e-3;
  double horizon = 1.0;
  std::string window = "0:0.5";
  std::string box = "-0.5:0.5";
  std::string starts = "net:0.05";
  double snap = 0.0;
  double r_max = kDefaultRMax;

  void add(CLI::App* app) {
    app->add_option("--dt", dt, "time step");
    app->add_option("--horizon", horizon, "time horizon T");
    app->add_option("--window", window, "start-time window t_min:t_max");
    app->add_option("--box", box, "spatial box lo:hi (signed; radial 0:hi on stars)");
    app->add_option("--starts", starts, "net:<spacing>[:<time spacing>] or file:<json list of {t, x}>");
    app->add_option("--snap", snap, "crossing snap tolerance (0: space quantum)");
    app->add_option("--r-max", r_max, "cut-off radius for infinite edges");
  }

  SimulationConfig config() const {
    SimulationConfig c;
    c.dt = dt;
    c.horizon = horizon;
    std::tie(c.t_min, c.t_max) = parse_range(window, "--window");
    std::tie(c.box_lo, c.box_hi) = parse_range(box, "--box");
    if (starts.rfind("net:", 0) == 0) {
      auto spec = starts.substr(4);
      std::replace(spec.begin(), spec.end(), ':', ',');
      const auto v = parse_list(spec);
      if (v.empty() || v.size() > 2) throw UsageError("--starts net:<spacing>[:<time spacing>]");
      c.start_spacing = v[0];
      if (v.size() == 2) c.start_time_spacing = v[1];
    } else if (starts.rfind("file:", 0) != 0) {
      throw UsageError("--starts must be net:<spacing> or file:<path>");
    }
    c.snap = snap;
    c.r_max = r_max;
    c.validate();
    return c;
  }
};

std::vector<StartPoint> explicit_starts(const std::string& file, const MetricGraph& g, const SimulationConfig& cfg) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open starts file " + file);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& ex) {
    throw UsageError("starts file: " + std::string(ex.what()));
  }
  const TimeGrid grid = cfg.grid();
  std::vector<StartPoint> out;
  for (const auto& e : j) {
    StartPoint sp;
    sp.step = grid.step(e.at("t").get<double>());
    const auto& x = e.at("x");
    sp.point = x.is_number() ? g.from_signed(quantize(x.get<double>(), cfg.quantum))
                             : parse_point(g, x.get<std::string>());
    out.push_back(sp);
  }
  std::sort(out.begin(), out.end(), [](const StartPoint& a, const StartPoint& b) {
    return a.step != b.step ? a.step < b.step : PointLess{}(a.point, b.point);
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const StartPoint& a, const StartPoint& b) { return a.step == b.step && a.point == b.point; }),
            out.end());
  return out;
}

// ---------------------------------------------------------------- simulate

struct SimulateCmd {
  FlowOptions flow;
  GridOptions grid;
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "csv";

  void add(CLI::App* app) {
    flow.add(app, true);
    grid.add(app);
    app->add_option("--seed", seed, "random seed");
    app->add_option("--out", out, "output directory")->required();
    app->add_option("--format", format, "paths file format")->check(CLI::IsMember({"csv", "jsonl"}));
  }

  int run() const {
    const SimulationConfig cfg = grid.config();
    const auto [kind, g] = flow.resolve(cfg.r_max);
    const auto starts = grid.starts.rfind("file:", 0) == 0 ? explicit_starts(grid.starts.substr(5), g, cfg)
                                                           : net_starts(kind, g, cfg);
    if (starts.empty()) throw UsageError("no start points");
    Skeleton sk = simulate(kind, g, starts, seed, cfg);
    auto meta = sk.metadata();
    meta["run"] = {{"command", "simulate"}, {"starts", grid.starts}, {"format", format}};
    const Skeleton tagged(sk.graph(), sk.grid(), std::vector<Path>(sk.paths().begin(), sk.paths().end()),
                          std::vector<MergeEvent>(sk.merges().begin(), sk.merges().end()), sk.space_step(),
                          sk.window(), meta);
    commit_files(out, skeleton_files(tagged, format == "csv" ? PathFormat::kCsv : PathFormat::kJsonLines));
    std::cout << "wrote " << tagged.size() << " entries to " << out << "\n";
    return kOk;
  }
};

Skeleton load_or_usage(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "skeleton.json")) throw UsageError("no skeleton in " + dir);
  return load_skeleton(dir);
}

std::vector<double> times_or_window(const std::string& list, const Skeleton& sk, double spacing) {
  if (!list.empty()) return parse_list(list);
  std::vector<double> out;
  const auto& w = sk.window();
  for (std::int64_t k = sk.grid().step_floor(w.t_min); sk.grid().time(k) <= w.t_max + 1e-12;
       k += std::max<std::int64_t>(1, std::llround(spacing / sk.dt()))) {
    out.push_back(sk.grid().time(k));
  }
  return out;
}

std::vector<GraphPoint> points_or_box(const std::string& list, const Skeleton& sk, double spacing) {
  if (list.empty()) return sk.window().box.sample(sk.graph(), spacing);
  std::vector<GraphPoint> out;
  std::stringstream ss(list);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(parse_point(sk.graph(), cell));
  return out;
}

// ---------------------------------------------------------------- extend

struct ExtendCmd {
  std::string skeleton;
  std::string shell = "none";
  std::string times;
  std::string points;
  double spacing = 0.05;
  int k_cap = 16;
  int threads = 0;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--skeleton", skeleton, "skeleton directory")->required();
    app->add_option("--shell", shell, "none | zero-level | custom:<file>");
    app->add_option("--times", times, "comma-separated start times (default: window grid)");
    app->add_option("--points", points, "comma-separated points (default: box net)");
    app->add_option("--spacing", spacing, "net spacing for default times and points");
    app->add_option("--k-cap", k_cap, "repair iteration cap");
    app->add_option("--threads", threads, "worker threads");
    app->add_option("--out", out, "output directory")->required();
  }

  int run() const {
    const auto sk = std::make_shared<const Skeleton>(load_or_usage(skeleton));
    const auto& g = sk->graph();
    const ClosedShell F = ClosedShell::parse(shell, g);
    const FlowMap theta(sk);
    const RepairedFlow psi(theta, F, k_cap);
    struct Query {
      std::int64_t s;
      GraphPoint x;
    };
    std::vector<Query> qs;
    for (double t : times_or_window(times, *sk, spacing)) {
      for (const auto& x : points_or_box(points, *sk, spacing)) qs.push_back({sk->grid().step(t), x});
    }
    std::vector<std::string> rows(qs.size());
    std::vector<json> traces(qs.size());
    parallel_for(qs.size(), resolve_threads(threads), [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const auto tr = psi.trace(qs[i].s, qs[i].x);
        traces[i] = tr.to_json(*sk);
        const Path p = psi.trajectory(qs[i].s, qs[i].x);
        std::ostringstream os;
        for (std::int64_t k = p.start_step(); k <= p.end_step(); ++k) {
          const GraphPoint y = p.at_step(k);
          os << i << ',' << format_double(sk->grid().time(qs[i].s)) << ',' << format_double(sk->grid().time(k)) << ',';
          if (g.is_line()) os << format_double(g.to_signed(y)) << '\n';
          else os << (y.on_vertex() ? std::string("vertex") : g.edge_label(y.edge)) << ':' << format_double(y.on_vertex() ? 0.0 : y.coord) << '\n';
        }
        rows[i] = os.str();
      }
    });
    std::string csv = "query_id,s,t,point\n";
    for (const auto& r : rows) csv += r;
    json meta{{"command", "extend"}, {"skeleton", skeleton}, {"shell", F.describe()}, {"k_cap", k_cap},
              {"queries", qs.size()}, {"provider", F.empty() ? "theta" : "psi"}};
    commit_files(out, {{"trajectories.csv", csv},
                       {"repair_traces.json", json(traces).dump(1) + "\n"},
                       {"extend.json", meta.dump(2) + "\n"}});
    std::cout << "extended " << qs.size() << " queries to " << out << "\n";
    return kOk;
  }
};

// ---------------------------------------------------------------- verify

struct VerifyCmd {
  std::string skeleton;
  std::string shell = "none";
  std::size_t samples = 10000;
  std::size_t stop_samples = 1000;
  std::uint64_t seed = 0;
  double eta = 0.05;
  std::string eps_ladder = "0.5,0.25,0.125";
  double cluster_tol = 0.0;
  double spacing = 0.05;
  int k_cap = 16;
  int threads = 0;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--skeleton", skeleton, "skeleton directory")->required();
    app->add_option("--shell", shell, "none | zero-level | custom:<file>");
    app->add_option("--samples", samples, "strong-flow (s, t, u, x) samples");
    app->add_option("--stop-samples", stop_samples, "stopping-time (s, x) samples");
    app->add_option("--seed", seed, "sampling seed");
    app->add_option("--eta", eta, "denseness radius for Sk2");
    app->add_option("--eps-ladder", eps_ladder, "equicontinuity ladder for Sk3");
    app->add_option("--cluster-tol", cluster_tol, "bifurcation cluster tolerance (0: 5 sqrt(dt))");
    app->add_option("--spacing", spacing, "bifurcation sample net spacing");
    app->add_option("--k-cap", k_cap, "repair iteration cap");
    app->add_option("--threads", threads, "worker threads");
    app->add_option("--out", out, "output directory")->required();
  }

  int run() const {
    const auto sk = std::make_shared<const Skeleton>(load_or_usage(skeleton));
    const auto& g = sk->graph();
    const ClosedShell F = ClosedShell::parse(shell, g);
    const int nthreads = resolve_threads(threads);
    json report;
    bool ok = true;

    AxiomParams ap;
    ap.eta = eta;
    ap.eps_ladder = parse_list(eps_ladder);
    const auto axioms = check_axioms(*sk, ap);
    report["axioms"] = axioms.to_json();
    ok = ok && axioms.pass();

    std::vector<std::pair<std::int64_t, GraphPoint>> bs;
    for (double t : times_or_window("", *sk, spacing)) {
      for (const auto& x : sk->window().box.sample(g, spacing)) bs.emplace_back(sk->grid().step(t), x);
    }
    BifurcationParams bp;
    bp.cluster_tol = cluster_tol;
    const auto bif = detect_bifurcations(*sk, bs, bp);
    const auto uncovered = uncovered_bifurcations(*sk, F, bif);
    json flagged = json::array();
    for (auto i : bif.flagged) flagged.push_back({{"s", sk->grid().time(bif.samples[i].s)}, {"x", point_json(g, bif.samples[i].x)}});
    // Coalescing BM and Walsh flows are strong through the ICP route, so their
    // flags are informational. The other kinds bifurcate on the vertex level,
    // which the shell must contain along with every flag.
    const auto& meta = sk->metadata();
    const bool icp_kind = meta.contains("flow") && [&] {
      const auto t = FlowKind::from_json(meta["flow"]).type;
      return t == FlowType::kCoalescingBM || t == FlowType::kWalshStar;
    }();
    bool level_covered = true;
    if (!icp_kind) {
      for (double t : times_or_window("", *sk, spacing)) {
        level_covered = level_covered && F.contains(g, sk->grid().step(t), g.vertex_point(0));
      }
    }
    const bool bif_ok = icp_kind || (level_covered && uncovered.empty());
    report["bifurcations"] = {{"samples", bs.size()}, {"flagged", flagged}, {"uncovered", uncovered.size()},
                              {"gating", icp_kind ? "informational (ICP flow)" : "shell must cover vertex level and flags"},
                              {"vertex_level_covered", level_covered}, {"pass", bif_ok}};
    ok = ok && bif_ok;

    const FlowMap theta(sk);
    const RepairedFlow psi(theta, F, k_cap);
    const FlowProvider provider = F.empty() ? FlowProvider([&](std::int64_t s, std::int64_t t, const GraphPoint& x) { return theta.value(s, t, x); })
                                            : FlowProvider([&](std::int64_t s, std::int64_t t, const GraphPoint& x) { return psi.value(s, t, x); });
    const auto queries = sample_flow_queries(*sk, samples, seed);
    const auto sf = verify_strong_flow(g, provider, queries, nthreads);
    json viol = json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(sf.violations.size(), 20); ++i) {
      const auto& v = sf.violations[i];
      viol.push_back({{"s", sk->grid().time(v.query.s)}, {"t", sk->grid().time(v.query.t)}, {"u", sk->grid().time(v.query.u)},
                      {"x", point_json(g, v.query.x)}, {"residual", v.residual}});
    }
    report["strong_flow"] = {{"provider", F.empty() ? "theta" : "psi"}, {"evaluated", sf.evaluated},
                             {"max_residual", sf.max_residual}, {"violations", sf.violations.size()},
                             {"examples", viol}, {"pass", sf.max_residual == 0}};
    ok = ok && sf.max_residual == 0;

    if (!F.empty()) {
      std::vector<int> ks(queries.size());
      std::vector<char> capped(queries.size());
      parallel_for(queries.size(), nthreads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          const auto tr = psi.trace(queries[i].s, queries[i].x);
          ks[i] = tr.k;
          capped[i] = tr.capped;
        }
      });
      std::map<int, std::size_t> hist;
      for (int k : ks) ++hist[k];
      json h = json::object();
      for (auto [k, c] : hist) h[std::to_string(k)] = c;
      const auto ncapped = static_cast<std::size_t>(std::count(capped.begin(), capped.end(), 1));
      report["repair"] = {{"shell", F.describe()}, {"k_histogram", h}, {"max_k", hist.empty() ? 0 : hist.rbegin()->first},
                          {"capped", ncapped}, {"pass", ncapped == 0}};
      ok = ok && ncapped == 0;
    }

    const auto rule = first_hit_of_level(g);
    std::vector<std::optional<double>> st(std::min(stop_samples, queries.size()));
    parallel_for(st.size(), nthreads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) st[i] = stopping_time_consistency(theta, queries[i].s, queries[i].x, rule);
    });
    double st_max = 0;
    std::size_t stopped = 0;
    for (const auto& r : st) {
      if (r) {
        ++stopped;
        st_max = std::max(st_max, *r);
      }
    }
    report["stopping_time"] = {{"rule", "first hit of the vertex level"}, {"samples", st.size()}, {"stopped", stopped},
                               {"max_residual", st_max}, {"pass", st_max == 0}};
    ok = ok && st_max == 0;

    report["pass"] = ok;
    report["run"] = {{"command", "verify"}, {"skeleton", skeleton}, {"shell", F.describe()}, {"samples", samples},
                     {"stop_samples", stop_samples}, {"seed", seed}, {"k_cap", k_cap}};
    commit_files(out, {{"report.json", report.dump(2) + "\n"}});
    std::cout << "axioms " << (axioms.pass() ? "pass" : "fail") << ", strong-flow residual " << sf.max_residual
              << ", bifurcations " << (bif_ok ? "covered" : "uncovered") << ": " << (ok ? "pass" : "fail") << "\n";
    return ok ? kOk : kFailed;
  }
};

// ---------------------------------------------------------------- estimate

struct EstimateCmd {
  std::string task;
  FlowOptions flow;
  std::string x = "0", y = "1";
  double c = 1.0;
  std::size_t N = 10000;
  std::uint64_t seed = 0;
  int steps = 256;
  int threads = 0;
  std::optional<double> target, at_least, at_most;
  double tol = 0.02;
  std::string K = "0:1";
  int n = 32;
  std::string m = "4,8";
  double beta_p = 1.0;
  int grid_points = 5;
  std::size_t certify_N = 10000;
  int j_max = 5;
  double dt = 1e-5;
  std::string times = "0.01,0.1,1";
  int seeds = 20;
  int n_starts = 100;
  double r = 0.5;
  std::string ladder = "0.125,0.0625,0.03125,0.015625,0.0078125";
  std::string starts;
  double fraction = 0.1;
  double lambda = 2.0;
  double t = 1.0;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--task", task, "meeting | coalescence | tail | distinct | exit | scaling | certify")
        ->required()
        ->check(CLI::IsMember({"meeting", "coalescence", "tail", "distinct", "exit", "scaling", "certify"}));
    flow.add(app, false);
    app->add_option("--x", x, "first point");
    app->add_option("--y", y, "second point");
    app->add_option("--c", c, "horizon factor: event T <= c rho(x,y)^2");
    app->add_option("-N,--samples", N, "Monte Carlo trials");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--steps", steps, "grid steps per trial horizon");
    app->add_option("--threads", threads, "worker threads");
    app->add_option("--target", target, "oracle value; verdict |estimate - target| <= tol");
    app->add_option("--tol", tol, "tolerance for --target");
    app->add_option("--at-least", at_least, "verdict: lower CI edge >= value");
    app->add_option("--at-most", at_most, "verdict: upper CI edge <= value");
    app->add_option("--K", K, "compact interval lo:hi");
    app->add_option("--n", n, "number of particles");
    app->add_option("--m", m, "comma-separated target counts");
    app->add_option("--beta-p", beta_p, "time constant beta of the coalescence property");
    app->add_option("--grid-points", grid_points, "certification grid points in K");
    app->add_option("--certify-samples", certify_N, "trials per certification pair");
    app->add_option("--j-max", j_max, "geometric tail levels");
    app->add_option("--dt", dt, "time step for n-point and skeleton runs");
    app->add_option("--times", times, "distinct-points times");
    app->add_option("--seeds", seeds, "distinct-points seeds");
    app->add_option("--n-starts", n_starts, "distinct-points start count");
    app->add_option("--r", r, "exit radius");
    app->add_option("--ladder", ladder, "decreasing exit-time ladder");
    app->add_option("--starts", starts, "exit-curve start points (default: net of the box)");
    app->add_option("--fraction", fraction, "decay fraction for the exit curve");
    app->add_option("--lambda", lambda, "scaling factor");
    app->add_option("--t", t, "scaling time");
    app->add_option("--out", out, "output directory")->required();
  }

  void apply_verdict(EstimateReport& rep) const {
    if (target) {
      rep.comparison = Comparison::kWithin;
      rep.target = *target;
      rep.tolerance = tol;
    } else if (at_least) {
      rep.comparison = Comparison::kAtLeast;
      rep.target = *at_least;
    } else if (at_most) {
      rep.comparison = Comparison::kAtMost;
      rep.target = *at_most;
    } else {
      return;
    }
    rep.decide();
  }

  int run() const {
    if (flow.flow.empty()) throw UsageError("--flow is required");
    const auto [kind, g] = flow.resolve(kDefaultRMax);
    const MonteCarloOptions mc{steps, threads};
    const auto [lo, hi] = parse_range(K, "--K");
    std::vector<EstimateReport> reps;
    json extra = json::object();
    auto certified = [&] {
      auto pc = certify_property_p(kind, lo, hi, beta_p, grid_points, certify_N, seed ^ 0x5bd1e995u, mc);
      extra["constants"] = pc.to_json();
      return pc;
    };
    if (task == "meeting") {
      auto rep = estimate_meeting_probability(kind, g, parse_point(g, x), parse_point(g, y), c, N, seed, mc);
      apply_verdict(rep);
      reps.push_back(rep);
    } else if (task == "certify") {
      certified();
    } else if (task == "coalescence") {
      const auto pc = certified();
      for (double mv : parse_list(m)) {
        reps.push_back(estimate_coalescence_time(kind, n, static_cast<int>(mv), lo, hi, N, seed, pc, {dt, 1.0, threads}));
      }
    } else if (task == "tail") {
      const auto pc = certified();
      reps = geometric_tail_check(kind, n, lo, hi, j_max, N, seed, pc, {dt, 1.0, threads});
    } else if (task == "distinct") {
      reps = distinct_points_curve(kind, n_starts, lo, hi, parse_list(times), seeds, seed, 1e-3, threads);
    } else if (task == "exit") {
      std::vector<GraphPoint> xs;
      if (!starts.empty()) {
        std::stringstream ss(starts);
        std::string cell;
        while (std::getline(ss, cell, ',')) xs.push_back(parse_point(g, cell));
      } else if (g.is_line()) {
        for (double v = -0.5; v <= 0.5 + 1e-12; v += 0.25) xs.push_back(g.from_signed(v));
      } else {
        xs.push_back(g.vertex_point(0));
        for (int e = 0; e < static_cast<int>(g.edge_count()); ++e) xs.push_back(g.star_point(e, 0.25));
      }
      reps = small_time_exit_curve(kind, g, xs, r, parse_list(ladder), N, seed, fraction, mc);
    } else if (task == "scaling") {
      if (kind.type != FlowType::kWalshStar) throw UsageError("scaling check needs --flow walsh");
      reps.push_back(scaling_check_walsh(g, lambda, parse_point(g, x), t, N, seed, mc));
    }
    json doc{{"task", task}, {"flow", kind.to_json()}, {"seed", seed}, {"samples", N}, {"reports", reports_to_json(reps)}};
    for (auto& [k, v] : extra.items()) doc[k] = v;
    commit_files(out, {{"estimates.json", doc.dump(2) + "\n"}, {"estimates.csv", reports_to_csv(reps)}});
    for (const auto& rep : reps) {
      std::cout << rep.name << ' ' << rep.estimate << " [" << rep.ci.lo << ", " << rep.ci.hi << "] " << to_string(rep.verdict) << "\n";
    }
    return exit_code_for(reps);
  }
};

// ---------------------------------------------------------------- export-plotdata

struct ExportCmd {
  std::string skeleton;
  std::string reports;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--skeleton", skeleton, "skeleton directory");
    app->add_option("--reports", reports, "estimates.json to flatten");
    app->add_option("--out", out, "output directory")->required();
  }

  int run() const {
    if (skeleton.empty() && reports.empty()) throw UsageError("nothing to export: give --skeleton or --reports");
    FileSet files;
    if (!skeleton.empty()) {
      const Skeleton sk = load_or_usage(skeleton);
      const auto& g = sk.graph();
      std::ostringstream traj, counts;
      traj << (g.is_line() ? "path_id,t,x\n" : "path_id,t,edge_id,r\n");
      for (std::size_t n = 0; n < sk.size(); ++n) {
        const Path& p = sk.path(n);
        for (std::int64_t k = p.start_step(); k <= p.end_step(); ++k) {
          const GraphPoint y = p.at_step(k);
          traj << n << ',' << format_double(sk.grid().time(k)) << ',';
          if (g.is_line()) traj << format_double(g.to_signed(y)) << '\n';
          else traj << (y.on_vertex() ? std::string("vertex") : g.edge_label(y.edge)) << ',' << format_double(g.radius(y)) << '\n';
        }
      }
      counts << "t,active,distinct\n";
      for (std::int64_t k = 0; k <= sk.horizon_step(); ++k) {
        counts << format_double(sk.grid().time(k)) << ',' << sk.active_count(k) << ',' << sk.occupants(k).size() << '\n';
      }
      files.emplace_back("trajectories.csv", traj.str());
      files.emplace_back("distinct_counts.csv", counts.str());
    }
    if (!reports.empty()) {
      json doc;
      try {
        doc = json::parse(read_text_file(reports));
      } catch (const json::exception& ex) {
        throw UsageError("reports file: " + std::string(ex.what()));
      }
      std::ostringstream csv;
      csv << "name,estimate,ci_lo,ci_hi,target,verdict\n";
      for (const auto& r : doc.at("reports")) {
        csv << r.at("name").get<std::string>() << ',' << format_double(r.at("estimate").get<double>()) << ','
            << format_double(r.at("ci_lo").get<double>()) << ',' << format_double(r.at("ci_hi").get<double>()) << ','
            << format_double(r.at("target").get<double>()) << ',' << r.at("verdict").get<std::string>() << '\n';
      }
      files.emplace_back("estimates_plot.csv", csv.str());
    }
    commit_files(out, files);
    std::cout << "exported " << files.size() << " files to " << out << "\n";
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coalescing stochastic flows on metric graphs"};
  app.name("coalesce_flow");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", "coalesce_flow 0.1.0");

  SimulateCmd simulate_cmd;
  ExtendCmd extend_cmd;
  VerifyCmd verify_cmd;
  EstimateCmd estimate_cmd;
  ExportCmd export_cmd;
  auto* sim = app.add_subcommand("simulate", "simulate a skeleton of coalescing trajectories");
  auto* ext = app.add_subcommand("extend", "materialize theta / psi on a query grid");
  auto* ver = app.add_subcommand("verify", "check axioms, bifurcation cover, strong flow and stopping times");
  auto* est = app.add_subcommand("estimate", "Monte Carlo estimates with CI verdicts");
  auto* exp = app.add_subcommand("export-plotdata", "flatten skeletons and reports into plot CSVs");
  for (auto* sub : {sim, ext, ver, est, exp}) sub->add_option("--config", "JSON file of option values");
  simulate_cmd.add(sim);
  extend_cmd.add(ext);
  verify_cmd.add(ver);
  estimate_cmd.add(est);
  export_cmd.add(exp);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*sim) return simulate_cmd.run();
    if (*ext) return extend_cmd.run();
    if (*ver) return verify_cmd.run();
    if (*est) return estimate_cmd.run();
    if (*exp) return export_cmd.run();
  } catch (const DensityViolation& e) {
    std::cerr << "density violation: " << e.what() << "\n";
    return kFailed;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {  // ParameterError, AlignmentError, shell specs
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const GraphError& e) {
    std::cerr << "graph error: " << e.what() << "\n";
    return kUsage;
  } catch (const SerializationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
