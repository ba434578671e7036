#include "cflow/serialization.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace cflow {

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace {

std::pair<int, double> edge_coord(const MetricGraph& g, const GraphPoint& p) {
  if (!p.on_vertex()) return {p.edge, p.coord};
  const auto& inc = g.vertex(p.vertex).incident;
  const int e = *std::min_element(inc.begin(), inc.end());
  const Edge& ed = g.edge(e);
  return {e, ed.from == p.vertex ? 0.0 : ed.length};
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw SerializationError("line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::size_t parse_index(const std::string& s, std::size_t line) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw SerializationError("line " + std::to_string(line) + ": bad index '" + s + "'");
  }
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct Row {
  std::size_t path_id;
  double t;
  std::string edge;
  double coord;
};

GraphPoint row_point(const MetricGraph& g, const Row& r, std::size_t line) {
  try {
    return g.point(g.edge_index(r.edge), r.coord);
  } catch (const GraphError& e) {
    throw SerializationError("line " + std::to_string(line) + ": " + e.what());
  }
}

}  // namespace

void write_paths(std::ostream& os, const MetricGraph& g, std::span<const Path> paths, PathFormat fmt) {
  if (fmt == PathFormat::kCsv) os << "path_id,t,edge_id,coord\n";
  for (std::size_t n = 0; n < paths.size(); ++n) {
    const Path& f = paths[n];
    for (std::int64_t k = f.start_step(); k <= f.end_step(); ++k) {
      const auto [e, c] = edge_coord(g, f.at_step(k));
      const std::string t = format_double(static_cast<double>(k) * f.dt());
      if (fmt == PathFormat::kCsv) {
        os << n << ',' << t << ',' << g.edge_label(e) << ',' << format_double(c) << '\n';
      } else {
        os << "{\"path_id\":" << n << ",\"t\":" << t << ",\"edge_id\":" << nlohmann::json(g.edge_label(e)).dump()
           << ",\"coord\":" << format_double(c) << "}\n";
      }
    }
  }
}

std::vector<Path> read_paths(std::istream& is, const MetricGraph& g, const TimeGrid& grid, PathFormat fmt) {
  std::vector<std::int64_t> starts;
  std::vector<std::vector<GraphPoint>> samples;
  std::string line;
  std::size_t lineno = 0;
  if (fmt == PathFormat::kCsv) {
    if (!std::getline(is, line) || line != "path_id,t,edge_id,coord") {
      throw SerializationError("paths file: missing header path_id,t,edge_id,coord");
    }
    ++lineno;
  }
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    Row r;
    if (fmt == PathFormat::kCsv) {
      const auto cells = split_csv(line);
      if (cells.size() != 4) throw SerializationError("line " + std::to_string(lineno) + ": expected 4 columns");
      r = {parse_index(cells[0], lineno), parse_double(cells[1], lineno), cells[2], parse_double(cells[3], lineno)};
    } else {
      try {
        const auto j = nlohmann::json::parse(line);
        const auto& e = j.at("edge_id");
        r = {j.at("path_id").get<std::size_t>(), j.at("t").get<double>(),
             e.is_string() ? e.get<std::string>() : e.dump(), j.at("coord").get<double>()};
      } catch (const nlohmann::json::exception& ex) {
        throw SerializationError("line " + std::to_string(lineno) + ": " + ex.what());
      }
    }
    std::int64_t k = 0;
    try {
      k = grid.step(r.t);
    } catch (const std::exception& ex) {
      throw SerializationError("line " + std::to_string(lineno) + ": " + ex.what());
    }
    if (r.path_id == samples.size()) {
      samples.emplace_back();
      starts.push_back(k);
    } else if (r.path_id + 1 != samples.size()) {
      throw SerializationError("line " + std::to_string(lineno) + ": path ids must be contiguous and ordered");
    }
    if (k != starts.back() + static_cast<std::int64_t>(samples.back().size())) {
      throw SerializationError("line " + std::to_string(lineno) + ": samples must be consecutive grid times");
    }
    samples.back().push_back(row_point(g, r, lineno));
  }
  std::vector<Path> paths;
  paths.reserve(samples.size());
  for (std::size_t n = 0; n < samples.size(); ++n) paths.emplace_back(starts[n], grid.dt, std::move(samples[n]));
  return paths;
}

void write_merges(std::ostream& os, const Skeleton& sk) {
  os << "m,n,t_merge\n";
  for (const auto& m : sk.merges()) {
    os << m.into << ',' << m.absorbed << ',' << format_double(static_cast<double>(m.step) * sk.dt()) << '\n';
  }
}

std::vector<MergeEvent> read_merges(std::istream& is, const TimeGrid& grid) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line) || line != "m,n,t_merge") throw SerializationError("merges file: missing header m,n,t_merge");
  std::vector<MergeEvent> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3) throw SerializationError("merges line " + std::to_string(lineno) + ": expected 3 columns");
    MergeEvent m;
    m.into = parse_index(cells[0], lineno);
    m.absorbed = parse_index(cells[1], lineno);
    try {
      m.step = grid.step(parse_double(cells[2], lineno));
    } catch (const AlignmentError& ex) {
      throw SerializationError("merges line " + std::to_string(lineno) + ": " + ex.what());
    }
    out.push_back(m);
  }
  return out;
}

nlohmann::json skeleton_header(const Skeleton& sk, PathFormat fmt) {
  const auto& w = sk.window();
  return {{"format", "coalesce-flow-skeleton/1"},
          {"paths_file", fmt == PathFormat::kCsv ? "paths.csv" : "paths.jsonl"},
          {"graph", sk.graph().to_json()},
          {"r_max", sk.graph().r_max()},
          {"grid", {{"dt", sk.dt()}, {"horizon_step", sk.horizon_step()}}},
          {"window", {{"t_min", w.t_min}, {"t_max", w.t_max}, {"box", w.box.to_json()}}},
          {"space_step", sk.space_step()},
          {"entries", sk.size()},
          {"merge_events", sk.merges().size()},
          {"metadata", sk.metadata()}};
}

void write_text_file(const std::filesystem::path& file, const std::string& content) {
  auto tmp = file;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw SerializationError("cannot write " + tmp.string());
    os << content;
    if (!os) throw SerializationError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

std::string read_text_file(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw SerializationError("cannot read " + file.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void commit_files(const std::filesystem::path& dir, const FileSet& files) {
  namespace fs = std::filesystem;
  const fs::path target = fs::absolute(dir).lexically_normal();
  fs::path stage = target;
  stage += ".partial";
  std::error_code ec;
  fs::remove_all(stage, ec);
  try {
    fs::create_directories(stage);
    for (const auto& [name, content] : files) write_text_file(stage / name, content);
    fs::create_directories(target);
    for (const auto& [name, content] : files) fs::rename(stage / name, target / name);
    fs::remove_all(stage);
  } catch (const fs::filesystem_error& ex) {
    fs::remove_all(stage, ec);
    throw SerializationError(ex.what());
  } catch (...) {
    fs::remove_all(stage, ec);
    throw;
  }
}

FileSet skeleton_files(const Skeleton& sk, PathFormat fmt) {
  std::ostringstream paths, merges;
  write_paths(paths, sk.graph(), sk.paths(), fmt);
  write_merges(merges, sk);
  return {{"skeleton.json", skeleton_header(sk, fmt).dump(2) + "\n"},
          {fmt == PathFormat::kCsv ? "paths.csv" : "paths.jsonl", paths.str()},
          {"merges.csv", merges.str()}};
}

void save_skeleton(const Skeleton& sk, const std::filesystem::path& dir, PathFormat fmt) {
  commit_files(dir, skeleton_files(sk, fmt));
}

Skeleton load_skeleton(const std::filesystem::path& dir) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(read_text_file(dir / "skeleton.json"));
  } catch (const nlohmann::json::exception& ex) {
    throw SerializationError(std::string("skeleton.json: ") + ex.what());
  }
  try {
    const MetricGraph g = MetricGraph::from_json(h.at("graph"), h.value("r_max", kDefaultRMax));
    TimeGrid grid{h.at("grid").at("dt").get<double>(), h.at("grid").at("horizon_step").get<std::int64_t>()};
    const auto& w = h.at("window");
    SkeletonWindow win{w.at("t_min").get<double>(), w.at("t_max").get<double>(), Region::from_json(w.at("box"))};
    const std::string pf = h.value("paths_file", "paths.csv");
    const PathFormat fmt = pf == "paths.jsonl" ? PathFormat::kJsonLines : PathFormat::kCsv;
    std::istringstream ps(read_text_file(dir / pf));
    auto paths = read_paths(ps, g, grid, fmt);
    if (paths.size() != h.at("entries").get<std::size_t>()) throw SerializationError("entry count does not match header");
    std::istringstream ms(read_text_file(dir / "merges.csv"));
    auto merges = read_merges(ms, grid);
    return Skeleton(g, grid, std::move(paths), std::move(merges), h.at("space_step").get<double>(), std::move(win),
                    h.value("metadata", nlohmann::json::object()));
  } catch (const nlohmann::json::exception& ex) {
    throw SerializationError(std::string("skeleton.json: ") + ex.what());
  } catch (const GraphError& ex) {
    throw SerializationError(std::string("graph: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw SerializationError(std::string("skeleton: ") + ex.what());
  }
}

}  // namespace cflow
