#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sthfl/federation.hpp"

namespace sthfl {

struct RunRequest {
  std::vector<ExperimentConfig> configs;
  std::vector<std::uint64_t> seeds;  // empty: each config runs with its own seed
  bool ablation = false;             // expand GLDP configs into the four loss variants
  bool emit_svg = false;
  bool parallel = true;              // clients within a stage
  std::filesystem::path out_dir;
};

struct RunRecord {
  std::string label;
  std::uint64_t seed = 0;
  std::string csv;  // relative to the output directory
  double wall_seconds = 0.0;
  std::map<std::string, double> summary;
};

struct AggregateRow {
  std::string label;
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single run
  int runs = 0;
};

struct RunManifest {
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  bool ablation = false;
  std::vector<std::string> configs;  // YAML of each requested config
  std::vector<RunRecord> runs;
  std::vector<AggregateRow> aggregate;
};

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

// full, lambda = 0, lambda = 1 and both prototype losses off, labelled by
// which relation terms remain. Non-GLDP configs come back unchanged.
std::vector<ExperimentConfig> ablation_variants(const ExperimentConfig& config);

// Creates the directory and proves it accepts a file; throws IoError otherwise.
void ensure_writable(const std::filesystem::path& dir);

// Mean over runs of every ALL-scope metric row, keyed by label.
MetricsLog mean_curves(const std::vector<std::pair<std::string, MetricsLog>>& runs);

// Runs configs x seeds and writes into out_dir:
//   runs/<label>_seed<k>.csv   metric rows of each run
//   aggregate.csv              label,metric,mean,stddev,runs over seeds
//   mean_curves.csv            per-round means in the metric-row format
//   A_sel.svg                  when emit_svg is set
//   manifest.json
RunManifest run_all(const RunRequest& request, std::ostream* progress = nullptr);

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);

// Rebuilds the request recorded in a manifest, writing to `out_dir`.
RunRequest request_from_manifest(const std::filesystem::path& path,
                                 const std::filesystem::path& out_dir);

}  // namespace sthfl
