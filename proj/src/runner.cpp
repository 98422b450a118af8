#include "sthfl/runner.hpp"

#include <chrono>
#include <cctype>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "sthfl/config.hpp"
#include "sthfl/error.hpp"
#include "sthfl/svg.hpp"

namespace sthfl {

namespace {

std::string slug(const std::string& label) {
  std::string out;
  for (char c : label) {
    const auto u = static_cast<unsigned char>(c);
    out += std::isalnum(u) || c == '-' ? static_cast<char>(std::tolower(u)) : '_';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::string out = "algorithm,metric,mean,stddev,runs\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{}\n", r.label, r.metric, r.mean, r.stddev, r.runs);
  }
  return out;
}

std::vector<AggregateRow> aggregate_runs(const std::vector<RunRecord>& runs) {
  std::vector<AggregateRow> out;
  std::vector<std::string> labels;
  for (const auto& r : runs) {
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);
  }
  for (const auto& label : labels) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : runs) {
      if (r.label != label) continue;
      for (const auto& [m, v] : r.summary) values[m].push_back(v);
    }
    for (const auto& [metric, v] : values) {
      AggregateRow row{label, metric, 0.0, 0.0, static_cast<int>(v.size())};
      for (double x : v) row.mean += x;
      row.mean /= static_cast<double>(v.size());
      if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - row.mean) * (x - row.mean);
        row.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
      }
      out.push_back(row);
    }
  }
  return out;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<ExperimentConfig> ablation_variants(const ExperimentConfig& config) {
  if (config.algorithm != Algorithm::kGldp) return {config};
  const std::string base = config.display_name();
  std::vector<ExperimentConfig> out;
  auto add = [&](const char* suffix, double lambda, bool lp, bool gp) {
    ExperimentConfig c = config;
    c.label = base + " " + suffix;
    c.weights.lambda = lambda;
    c.weights.use_lp = lp;
    c.weights.use_gp = gp;
    out.push_back(std::move(c));
  };
  add("full", config.weights.lambda, true, true);
  add("GP only", 0.0, true, true);   // lambda = 0 drops the local relation term
  add("LP only", 1.0, true, true);   // lambda = 1 drops the global relation term
  add("CE only", config.weights.lambda, false, false);
  return out;
}

void ensure_writable(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    out << "probe";
    if (!out) throw IoError(fmt::format("output directory '{}' is not writable", dir.string()));
  }
  std::filesystem::remove(probe, ec);
}

MetricsLog mean_curves(const std::vector<std::pair<std::string, MetricsLog>>& runs) {
  using Key = std::tuple<std::string, int, int, std::string>;
  std::map<Key, std::pair<double, int>> sums;
  std::vector<Key> order;
  for (const auto& [label, log] : runs) {
    for (const auto& r : log.rows()) {
      if (r.scope != kScopeAll) continue;
      Key k{label, r.round, r.stage, r.metric};
      auto [it, fresh] = sums.try_emplace(k, 0.0, 0);
      if (fresh) order.push_back(k);
      it->second.first += r.value;
      ++it->second.second;
    }
  }
  MetricsLog out;
  for (const auto& k : order) {
    const auto& [sum, n] = sums[k];
    out.add({std::get<1>(k), std::get<2>(k), std::get<0>(k), std::get<3>(k), kScopeAll, sum / n});
  }
  return out;
}

RunManifest run_all(const RunRequest& request, std::ostream* progress) {
  if (request.configs.empty()) throw ConfigError("no configs to run");
  for (const auto& c : request.configs) c.validate();
  // Fail on an unusable output directory before any compute.
  ensure_writable(request.out_dir);
  ensure_writable(request.out_dir / "runs");

  RunManifest manifest;
  manifest.seeds = request.seeds;
  manifest.ablation = request.ablation;
  std::string hashed;
  for (const auto& c : request.configs) {
    manifest.configs.push_back(print_config(c));
    hashed += manifest.configs.back();
  }
  hashed += fmt::format("seeds={};ablation={}", fmt::join(request.seeds, ","), request.ablation);
  manifest.config_hash = fmt::format("{:016x}", fnv1a(hashed));

  std::vector<ExperimentConfig> expanded;
  for (const auto& c : request.configs) {
    if (request.ablation) {
      for (auto& v : ablation_variants(c)) expanded.push_back(std::move(v));
    } else {
      expanded.push_back(c);
    }
  }

  std::vector<std::pair<std::string, MetricsLog>> logs;
  ExperimentOptions options;
  options.parallel = request.parallel;
  for (const auto& base : expanded) {
    std::vector<std::uint64_t> seeds = request.seeds;
    if (seeds.empty()) seeds.push_back(base.seed);
    for (std::uint64_t seed : seeds) {
      ExperimentConfig c = base;
      c.seed = seed;
      const std::string label = c.display_name();
      const auto start = std::chrono::steady_clock::now();
      ExperimentResult result = run_experiment(c, options);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

      RunRecord rec;
      rec.label = label;
      rec.seed = seed;
      rec.csv = fmt::format("runs/{}_seed{}.csv", slug(label), seed);
      rec.wall_seconds = secs;
      rec.summary = summarize(result.metrics, c.summary_window);
      std::ostringstream csv;
      result.metrics.write_csv(csv);
      write_text(request.out_dir / rec.csv, csv.str());
      if (progress != nullptr) {
        *progress << fmt::format("{} seed {}: A_sel {:.4f} A_loc {:.4f} A_glo {:.4f} ({:.1f}s)\n", label,
                                 seed, rec.summary[kMetricSelected], rec.summary[kMetricLocal],
                                 rec.summary[kMetricGlobal], secs);
        for (const auto& w : result.warnings) *progress << "warning: " << w << "\n";
      }
      logs.emplace_back(label, std::move(result.metrics));
      manifest.runs.push_back(std::move(rec));
    }
  }

  manifest.aggregate = aggregate_runs(manifest.runs);
  write_text(request.out_dir / "aggregate.csv", aggregate_csv(manifest.aggregate));
  MetricsLog curves = mean_curves(logs);
  std::ostringstream curve_csv;
  curves.write_csv(curve_csv);
  write_text(request.out_dir / "mean_curves.csv", curve_csv.str());
  if (request.emit_svg) {
    auto series = curves_from_log(curves, kMetricSelected);
    write_text(request.out_dir / "A_sel.svg", emit_svg(series, kMetricSelected));
  }
  write_manifest(manifest, request.out_dir / "manifest.json");
  return manifest;
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["config_hash"] = m.config_hash;
  j["seeds"] = m.seeds;
  j["ablation"] = m.ablation;
  j["configs"] = m.configs;
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& r : m.runs) {
    j["runs"].push_back({{"label", r.label},
                         {"seed", r.seed},
                         {"csv", r.csv},
                         {"wall_seconds", r.wall_seconds},
                         {"summary", r.summary}});
  }
  j["aggregate"] = "aggregate.csv";
  j["mean_curves"] = "mean_curves.csv";
  write_text(path, j.dump(2) + "\n");
}

RunRequest request_from_manifest(const std::filesystem::path& path,
                                 const std::filesystem::path& out_dir) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read manifest '{}'", path.string()));
  nlohmann::json j;
  try {
    in >> j;
    RunRequest req;
    req.out_dir = out_dir;
    req.ablation = j.at("ablation").get<bool>();
    req.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& text : j.at("configs")) {
      req.configs.push_back(parse_config_text(text.get<std::string>(), path.string()).config);
    }
    return req;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("manifest '{}': {}", path.string(), e.what()));
  }
}

}  // namespace sthfl
