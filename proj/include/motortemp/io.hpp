#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace motortemp {

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace motortemp
