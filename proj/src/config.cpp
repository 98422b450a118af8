#include "sthfl/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "sthfl/error.hpp"

namespace sthfl {

namespace {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& at, const std::string& what) const {
    const auto mark = at.Mark();
    if (mark.line >= 0) throw ConfigError(fmt::format("{}:{}: {}", source_, mark.line + 1, what));
    throw ConfigError(fmt::format("{}: {}", source_, what));
  }

  // Rejects keys outside `allowed`, pointing at the offending key's line.
  void check_keys(const YAML::Node& map, const std::string& section,
                  const std::set<std::string>& allowed) const {
    if (!map.IsMap()) fail(map, fmt::format("'{}' must be a mapping", section));
    for (auto it = map.begin(); it != map.end(); ++it) {
      const auto key = it->first.as<std::string>();
      if (!allowed.contains(key)) {
        const std::string where = section.empty() ? "" : " in '" + section + "'";
        fail(it->first, fmt::format("unknown key '{}'{}", key, where));
      }
    }
  }

  template <typename T>
  bool scalar(const YAML::Node& map, const char* key, T& out) const {
    const YAML::Node n = map[key];
    if (!n) return false;
    if (!n.IsScalar()) fail(n, fmt::format("'{}' must be a scalar", key));
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, fmt::format("'{}' has the wrong type (got '{}')", key, n.Scalar()));
    }
    return true;
  }

  void integer(const YAML::Node& map, const char* key, int& out, int lo,
               int hi = std::numeric_limits<int>::max()) const {
    if (!scalar(map, key, out)) return;
    if (out < lo || out > hi) {
      fail(map[key], hi == std::numeric_limits<int>::max()
                         ? fmt::format("'{}' = {} must be >= {}", key, out, lo)
                         : fmt::format("'{}' = {} must lie in [{}, {}]", key, out, lo, hi));
    }
  }

  // lo_open: lower bound excluded.
  void real(const YAML::Node& map, const char* key, double& out, double lo, bool lo_open,
            double hi = std::numeric_limits<double>::infinity()) const {
    if (!scalar(map, key, out)) return;
    const bool ok = (lo_open ? out > lo : out >= lo) && out <= hi;
    if (!ok) {
      const std::string range = std::isinf(hi) ? fmt::format("{} {}", lo_open ? ">" : ">=", lo)
                                                : fmt::format("in [{}, {}]", lo, hi);
      fail(map[key], fmt::format("'{}' = {} must be {}", key, out, range));
    }
  }

 private:
  std::string source_;
};

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Shortest decimal that reads back to the same double.
std::string num(double v) { return fmt::format("{}", v); }

}  // namespace

LoadedConfig parse_config_text(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(fmt::format("{}:{}: {}", source, e.mark.line + 1, e.msg));
  }
  LoadedConfig out;
  ExperimentConfig& c = out.config;
  if (!root || root.IsNull()) {
    c.validate();
    return out;
  }
  Reader r(source);
  r.check_keys(root, "", {"algorithm", "inference", "label", "rounds", "clients_per_round",
                          "hidden_dim", "beta", "fedprox_mu", "summary_window", "seed", "data",
                          "partition", "optimizer", "loss"});

  std::string text_value;
  if (r.scalar(root, "algorithm", text_value)) {
    try {
      c.algorithm = parse_algorithm(text_value);
    } catch (const ConfigError&) {
      r.fail(root["algorithm"], fmt::format("unknown algorithm '{}' (GLDP, FedAvg, FedRep, FedProx)", text_value));
    }
  }
  if (r.scalar(root, "inference", text_value)) {
    try {
      c.inference = parse_inference(text_value);
    } catch (const ConfigError&) {
      r.fail(root["inference"], fmt::format("unknown inference mode '{}' (gp, lp)", text_value));
    }
  }
  r.scalar(root, "label", c.label);
  r.integer(root, "rounds", c.rounds, 0);
  r.integer(root, "clients_per_round", c.clients_per_round, 1);
  r.integer(root, "hidden_dim", c.hidden_dim, 1);
  r.real(root, "beta", c.beta, 0.0, false, 1.0);
  r.real(root, "fedprox_mu", c.fedprox_mu, 0.0, false);
  r.integer(root, "summary_window", c.summary_window, 1);
  r.scalar(root, "seed", c.seed);

  if (const YAML::Node d = root["data"]) {
    r.check_keys(d, "data", {"num_classes", "input_dim", "samples_per_class", "class_center_scale",
                             "noise_sigma"});
    r.integer(d, "num_classes", c.data.num_classes, 2);
    r.integer(d, "input_dim", c.data.input_dim, 1);
    r.integer(d, "samples_per_class", c.data.samples_per_class, 1);
    r.real(d, "class_center_scale", c.data.class_center_scale, 0.0, true);
    r.real(d, "noise_sigma", c.data.noise_sigma, 0.0, false);
  }
  if (const YAML::Node p = root["partition"]) {
    r.check_keys(p, "partition", {"num_clients", "classes_per_client", "num_stages",
                                  "imbalance_factor", "layout"});
    r.integer(p, "num_clients", c.plan.num_clients, 1);
    r.integer(p, "classes_per_client", c.plan.classes_per_client, 1);
    r.integer(p, "num_stages", c.plan.num_stages, 1);
    r.real(p, "imbalance_factor", c.plan.imbalance_factor, 1.0, false);
    if (r.scalar(p, "layout", text_value)) {
      const auto l = lower(text_value);
      if (l == "sliding") {
        c.plan.layout = StageLayout::kSliding;
      } else if (l == "replicated") {
        c.plan.layout = StageLayout::kReplicated;
      } else {
        r.fail(p["layout"], fmt::format("unknown layout '{}' (sliding, replicated)", text_value));
      }
    }
  }
  if (const YAML::Node o = root["optimizer"]) {
    r.check_keys(o, "optimizer", {"step_size", "mu_epochs", "nu_epochs", "local_epochs",
                                  "weight_decay", "batch_size"});
    r.real(o, "step_size", c.opt.step_size, 0.0, false);
    r.integer(o, "mu_epochs", c.opt.mu_epochs, 0);
    r.integer(o, "nu_epochs", c.opt.nu_epochs, 0);
    r.real(o, "weight_decay", c.opt.weight_decay, 0.0, false);
    r.integer(o, "batch_size", c.opt.batch_size, 1);
    int budget = 0;
    if (r.scalar(o, "local_epochs", budget) && budget != c.opt.mu_epochs + c.opt.nu_epochs) {
      r.fail(o["local_epochs"], fmt::format("local_epochs = {} but mu_epochs + nu_epochs = {}", budget,
                                            c.opt.mu_epochs + c.opt.nu_epochs));
    }
  }
  if (const YAML::Node l = root["loss"]) {
    r.check_keys(l, "loss", {"lambda", "temperature", "use_lp", "use_gp"});
    r.real(l, "lambda", c.weights.lambda, 0.0, false, 1.0);
    r.real(l, "temperature", c.weights.temperature, 0.0, true);
    r.scalar(l, "use_lp", c.weights.use_lp);
    r.scalar(l, "use_gp", c.weights.use_gp);
  }

  try {
    c.validate();
  } catch (const ConfigError& e) {
    std::string what = e.what();
    const std::string prefix = "config error: ";
    if (what.starts_with(prefix)) what.erase(0, prefix.size());
    throw ConfigError(fmt::format("{}: {}", source, what));
  }
  if (c.opt.mu_epochs >= c.opt.nu_epochs) {
    out.warnings.push_back(fmt::format("{}: mu_epochs ({}) is not below nu_epochs ({})", source,
                                       c.opt.mu_epochs, c.opt.nu_epochs));
  }
  return out;
}

LoadedConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string print_config(const ExperimentConfig& c) {
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "algorithm" << YAML::Value << algorithm_name(c.algorithm);
  e << YAML::Key << "inference" << YAML::Value << inference_name(c.inference);
  e << YAML::Key << "label" << YAML::Value << YAML::DoubleQuoted << c.label;
  e << YAML::Key << "rounds" << YAML::Value << c.rounds;
  e << YAML::Key << "clients_per_round" << YAML::Value << c.clients_per_round;
  e << YAML::Key << "hidden_dim" << YAML::Value << c.hidden_dim;
  e << YAML::Key << "beta" << YAML::Value << num(c.beta);
  e << YAML::Key << "fedprox_mu" << YAML::Value << num(c.fedprox_mu);
  e << YAML::Key << "summary_window" << YAML::Value << c.summary_window;
  e << YAML::Key << "seed" << YAML::Value << c.seed;

  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "num_classes" << YAML::Value << c.data.num_classes;
  e << YAML::Key << "input_dim" << YAML::Value << c.data.input_dim;
  e << YAML::Key << "samples_per_class" << YAML::Value << c.data.samples_per_class;
  e << YAML::Key << "class_center_scale" << YAML::Value << num(c.data.class_center_scale);
  e << YAML::Key << "noise_sigma" << YAML::Value << num(c.data.noise_sigma);
  e << YAML::EndMap;

  e << YAML::Key << "partition" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "num_clients" << YAML::Value << c.plan.num_clients;
  e << YAML::Key << "classes_per_client" << YAML::Value << c.plan.classes_per_client;
  e << YAML::Key << "num_stages" << YAML::Value << c.plan.num_stages;
  e << YAML::Key << "imbalance_factor" << YAML::Value << num(c.plan.imbalance_factor);
  e << YAML::Key << "layout" << YAML::Value
    << (c.plan.layout == StageLayout::kReplicated ? "replicated" : "sliding");
  e << YAML::EndMap;

  e << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "step_size" << YAML::Value << num(c.opt.step_size);
  e << YAML::Key << "mu_epochs" << YAML::Value << c.opt.mu_epochs;
  e << YAML::Key << "nu_epochs" << YAML::Value << c.opt.nu_epochs;
  e << YAML::Key << "weight_decay" << YAML::Value << num(c.opt.weight_decay);
  e << YAML::Key << "batch_size" << YAML::Value << c.opt.batch_size;
  e << YAML::EndMap;

  e << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "lambda" << YAML::Value << num(c.weights.lambda);
  e << YAML::Key << "temperature" << YAML::Value << num(c.weights.temperature);
  e << YAML::Key << "use_lp" << YAML::Value << c.weights.use_lp;
  e << YAML::Key << "use_gp" << YAML::Value << c.weights.use_gp;
  e << YAML::EndMap;

  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace sthfl
