#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace csifp {

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(const void* data, std::size_t len);
Sha256Digest sha256(std::string_view text);

std::string hex_string(const std::uint8_t* data, std::size_t len);
std::string hex_string(const Sha256Digest& digest);

// SHA-256 of a file's contents; throws on I/O error.
Sha256Digest sha256_file(const std::string& path);

}  // namespace csifp
