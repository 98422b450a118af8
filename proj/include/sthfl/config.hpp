#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sthfl/federation.hpp"

namespace sthfl {

struct LoadedConfig {
  ExperimentConfig config;
  std::vector<std::string> warnings;  // legal but unusual settings
};

// YAML experiment description. Keys left out keep their defaults; unknown
// keys, type mismatches and out-of-range values raise ConfigError naming the
// source and line.
LoadedConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
LoadedConfig parse_config_file(const std::filesystem::path& path);

// Complete YAML form of a config; parse_config_text(print_config(c)) == c.
std::string print_config(const ExperimentConfig& config);

}  // namespace sthfl
