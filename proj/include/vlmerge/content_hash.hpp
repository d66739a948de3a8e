#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>

namespace vlmerge {

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace vlmerge
