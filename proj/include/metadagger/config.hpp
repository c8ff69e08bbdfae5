#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "metadagger/harness.hpp"

namespace metadagger {

/// Experiment settings plus the artifact directories used by the CLI.
/// Relative directories resolve against the CLI's --out directory.
struct CliConfig {
    ExperimentConfig experiment;
    std::filesystem::path tracks_dir{"tracks"};
    std::filesystem::path models_dir{"models"};
    std::filesystem::path datasets_dir{"datasets"};
    std::filesystem::path reports_dir{"reports"};
};

/// Flat `section.key = value` lines; `#` starts a comment. Unknown keys and
/// malformed values throw ConfigError naming the key.
CliConfig parse_config(std::string_view text);
CliConfig load_config(const std::filesystem::path& path);

/// Canonical text form of every key; parse_config(dump_config(c)) reproduces c.
std::string dump_config(const CliConfig& cfg);

/// All accepted keys, in canonical order.
std::vector<std::string> config_keys();

}  // namespace metadagger
