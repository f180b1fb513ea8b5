#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nnmpc::io {

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double value);

/// Parses a full token as a double; throws FileError naming `what` on failure.
double parse_double(std::string_view token, std::string_view what);

/// Writes to a sibling temporary and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Throws FileError if the file is missing or unreadable.
std::string read_file(const std::filesystem::path& path);

/// Comma-split of one CSV line (no quoting support; all our files are numeric).
std::vector<std::string_view> split_csv_line(std::string_view line);

/// First line of every CSV artifact: "# config_hash=<hash>".
std::string hash_comment(std::string_view config_hash);

}  // namespace nnmpc::io
