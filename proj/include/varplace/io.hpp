#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace varplace {

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

/// Inverse of format_double; throws ValidationError on trailing junk.
double parse_double(std::string_view text);

/// Writes to `path.tmp` and renames over `path`.
void write_file_atomic(const std::string& path, std::string_view content);

std::string read_file(const std::string& path);

/// 64-bit FNV-1a, rendered as 16 hex digits. Stable across platforms.
std::uint64_t fnv1a64(std::string_view data);
std::string hash_hex(std::string_view data);

/// Minimal CSV reader: splits on commas, trims whitespace, skips blank lines.
std::vector<std::vector<std::string>> read_csv(const std::string& text);

}  // namespace varplace
