// Command-line driver: runs experiments from YAML configs, re-runs manifests,
// exports partitions, plots metric CSVs and audits client uploads.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "sthfl/config.hpp"
#include "sthfl/error.hpp"
#include "sthfl/runner.hpp"
#include "sthfl/svg.hpp"

namespace {

using namespace sthfl;

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError("bad seed '" + s + "'");
  return v;
}

// "1,2,7" or ranges like "1-5", mixed freely.
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(parse_u64(item));
      continue;
    }
    const auto lo = parse_u64(item.substr(0, dash)), hi = parse_u64(item.substr(dash + 1));
    if (hi < lo) throw ConfigError("empty seed range '" + item + "'");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  return seeds;
}

ExperimentConfig load_one(const std::string& path) {
  if (path.empty()) return ExperimentConfig{};
  LoadedConfig c = parse_config_file(path);
  for (const auto& w : c.warnings) std::cerr << "warning: " << w << "\n";
  return c.config;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write '" + path + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-temporal heterogeneous federated learning simulator"};
  app.require_subcommand(0, 1);

  std::vector<std::string> config_paths;
  std::string seeds_text, algorithm, inference, out_dir = "results";
  bool ablation = false, want_svg = false, serial = false;
  app.add_option("--config", config_paths, "experiment YAML (repeatable)")
      ->envname("STHFL_CONFIG")
      ->delimiter(',');
  app.add_option("--seeds", seeds_text, "seed list, e.g. 1,2,3 or 1-5")->envname("STHFL_SEEDS");
  app.add_option("--algorithm", algorithm, "override: GLDP, FedAvg, FedRep or FedProx")
      ->envname("STHFL_ALGORITHM");
  app.add_flag("--ablation", ablation, "run the four loss variants of each GLDP config")
      ->envname("STHFL_ABLATION");
  app.add_option("--inference", inference, "override: gp or lp")->envname("STHFL_INFERENCE");
  app.add_option("--out", out_dir, "output directory")->envname("STHFL_OUT");
  app.add_flag("--emit-svg", want_svg, "also write A_sel.svg")->envname("STHFL_EMIT_SVG");
  app.add_flag("--serial", serial, "train selected clients one after another")
      ->envname("STHFL_SERIAL");

  auto* rerun = app.add_subcommand("rerun", "repeat the runs recorded in a manifest");
  std::string manifest_path, rerun_out;
  rerun->add_option("--manifest", manifest_path)->required();
  rerun->add_option("--out", rerun_out)->required();

  auto* export_cmd = app.add_subcommand("export-data", "write the client partitions as CSV");
  std::string export_config, export_out;
  std::uint64_t export_seed = 0;
  export_cmd->add_option("--config", export_config);
  export_cmd->add_option("--seed", export_seed, "overrides the config seed");
  export_cmd->add_option("--out", export_out)->required();

  auto* plot = app.add_subcommand("plot", "SVG curves from a metrics CSV");
  std::string plot_csv, plot_metric = kMetricSelected, plot_out;
  plot->add_option("--csv", plot_csv)->required();
  plot->add_option("--metric", plot_metric);
  plot->add_option("--out", plot_out)->required();

  auto* audit = app.add_subcommand("audit", "run once and check uploads for private data");
  std::string audit_config, message_log;
  std::uint64_t audit_seed = 0;
  audit->add_option("--config", audit_config);
  audit->add_option("--seed", audit_seed, "overrides the config seed");
  audit->add_option("--message-log", message_log, "also write the binary message log here");

  auto* show = app.add_subcommand("print-config", "print the effective config");
  std::string show_config;
  show->add_option("--config", show_config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code(ErrorCategory::kConfig);
  }

  try {
    if (*rerun) {
      RunRequest req = request_from_manifest(manifest_path, rerun_out);
      run_all(req, &std::cout);
      return 0;
    }
    if (*export_cmd) {
      ExperimentConfig c = load_one(export_config);
      if (export_cmd->count("--seed") > 0) c.seed = export_seed;
      FederatedData data = build_federated_data(c);
      export_partitions(export_out, data.spec, data.plan, data.timelines);
      std::cout << fmt::format("wrote {} client partitions to {}\n", data.timelines.size(), export_out);
      return 0;
    }
    if (*plot) {
      std::ifstream in(plot_csv);
      if (!in) throw IoError("cannot read '" + plot_csv + "'");
      auto series = curves_from_log(MetricsLog::read_csv(in), plot_metric);
      write_file(plot_out, emit_svg(series, plot_metric));
      return 0;
    }
    if (*audit) {
      ExperimentConfig c = load_one(audit_config);
      if (audit->count("--seed") > 0) c.seed = audit_seed;
      ExperimentOptions opt;
      opt.keep_privacy_trail = true;
      ExperimentResult r = run_experiment(c, opt);
      if (!message_log.empty()) {
        std::ofstream out(message_log, std::ios::binary);
        r.messages.write(out);
        if (!out) throw IoError("cannot write '" + message_log + "'");
      }
      FederatedData data = build_federated_data(c);
      AuditReport rep = audit_uploads(r.messages, r.trail, data.timelines);
      std::cout << fmt::format(
          "uploads checked: {}\nhead sections: {}\nhead value matches: {}\ninput value matches: {}\n"
          "unparseable payloads: {}\nverdict: {}\n",
          rep.uploads_checked, rep.head_sections, rep.head_value_hits, rep.input_value_hits,
          rep.label_fields, rep.clean() ? "clean" : "LEAK");
      return rep.clean() ? 0 : 1;
    }
    if (*show) {
      std::cout << print_config(load_one(show_config));
      return 0;
    }

    RunRequest req;
    if (config_paths.empty()) config_paths.push_back("");
    for (const auto& p : config_paths) {
      ExperimentConfig c = load_one(p);
      if (!algorithm.empty()) c.algorithm = parse_algorithm(algorithm);
      if (!inference.empty()) c.inference = parse_inference(inference);
      req.configs.push_back(c);
    }
    req.seeds = parse_seeds(seeds_text);
    req.ablation = ablation;
    req.emit_svg = want_svg;
    req.parallel = !serial;
    req.out_dir = out_dir;
    RunManifest m = run_all(req, &std::cout);
    std::cout << fmt::format("{} runs, config hash {}, results in {}\n", m.runs.size(), m.config_hash,
                             out_dir);
    return 0;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
