#pragma once

#include <filesystem>
#include <string>

namespace metadagger {

/// Writes `content` to a sibling temp file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

/// Shortest decimal form that parses back to the same double.
std::string format_exact(double v);

/// Rounds to 9 significant digits (the track file precision).
double round9(double v);

}  // namespace metadagger
