#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace selena {

// Shortest decimal form that round-trips the exact double.
std::string format_double(double v);

// Strict full-string parse.
double parse_double(const std::string& s);

std::string hex64(std::uint64_t v);

// Write-then-rename so an interrupted run never leaves a partial file at the
// final path.
void atomic_write_file(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

}  // namespace selena
