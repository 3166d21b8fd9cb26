#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace ulm {

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view text);

}  // namespace ulm
