#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace nst {

/// Writes `bytes` to a temporary file beside `path`, then renames it into
/// place, so readers never observe a partial file. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Whole-file read. Throws IoError.
std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, printed as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace nst
