#pragma once

#include <string>
#include <string_view>

namespace dguide {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
/// SHA-256 of a file's bytes; MissingArtifact if it cannot be read.
std::string file_sha256(const std::string& path);

}  // namespace dguide
