#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cflow/skeleton.hpp"
#include "json.hpp"

namespace cflow {

class SerializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PathFormat { kCsv, kJsonLines };

// Shortest round-trip decimal form, so written files are byte-stable.
std::string format_double(double x);

// One row per (path, sample): path_id,t,edge_id,coord. Vertices are written
// on their smallest incident edge at coordinate 0 or the edge length.
void write_paths(std::ostream& os, const MetricGraph& g, std::span<const Path> paths, PathFormat fmt);
std::vector<Path> read_paths(std::istream& is, const MetricGraph& g, const TimeGrid& grid, PathFormat fmt);

void write_merges(std::ostream& os, const Skeleton& sk);  // m,n,t_merge with m the surviving class
std::vector<MergeEvent> read_merges(std::istream& is, const TimeGrid& grid);

nlohmann::json skeleton_header(const Skeleton& sk, PathFormat fmt = PathFormat::kCsv);

using FileSet = std::vector<std::pair<std::string, std::string>>;  // (name, content)

// Writes all files into dir. They are staged in a sibling temporary
// directory and moved into place, so a failure leaves no partial output.
void commit_files(const std::filesystem::path& dir, const FileSet& files);

// skeleton.json, paths.csv (or paths.jsonl) and merges.csv.
FileSet skeleton_files(const Skeleton& sk, PathFormat fmt = PathFormat::kCsv);
void save_skeleton(const Skeleton& sk, const std::filesystem::path& dir, PathFormat fmt = PathFormat::kCsv);
Skeleton load_skeleton(const std::filesystem::path& dir);

// Atomic single-file write (temporary file plus rename).
void write_text_file(const std::filesystem::path& file, const std::string& content);
std::string read_text_file(const std::filesystem::path& file);

}  // namespace cflow
