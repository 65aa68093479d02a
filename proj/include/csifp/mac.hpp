#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace csifp {

// 6-byte hardware address. Canonical text form is lowercase colon-separated
// hex ("aa:bb:cc:dd:ee:ff"); byte-wise ordering equals lexicographic ordering
// of the canonical string.
struct MacAddress {
    std::array<std::uint8_t, 6> bytes{};

    // Accepts colon- or dash-separated hex, any case. Throws
    // std::invalid_argument on malformed input.
    static MacAddress parse(std::string_view text);

    std::string str() const;

    auto operator<=>(const MacAddress&) const = default;
};

// Stable 64-bit key for seed derivation.
std::uint64_t mac_key(const MacAddress& mac);

}  // namespace csifp
