#include "csifp/mac.hpp"

#include <cstdio>
#include <stdexcept>

namespace csifp {

namespace {

int hex_digit(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

}  // namespace

MacAddress MacAddress::parse(std::string_view text) {
    // Expected layout: xx:xx:xx:xx:xx:xx (17 chars), ':' or '-' separators.
    if (text.size() != 17) {
        throw std::invalid_argument("malformed MAC address: \"" + std::string(text) + "\"");
    }
    MacAddress mac;
    for (int i = 0; i < 6; ++i) {
        const int hi = hex_digit(text[i * 3]);
        const int lo = hex_digit(text[i * 3 + 1]);
        if (hi < 0 || lo < 0) {
            throw std::invalid_argument("malformed MAC address: \"" + std::string(text) + "\"");
        }
        mac.bytes[i] = static_cast<std::uint8_t>(hi * 16 + lo);
        if (i < 5) {
            const char sep = text[i * 3 + 2];
            if (sep != ':' && sep != '-') {
                throw std::invalid_argument("malformed MAC address: \"" + std::string(text) + "\"");
            }
        }
    }
    return mac;
}

std::string MacAddress::str() const {
    char buf[18];
    std::snprintf(buf, sizeof(buf), "%02x:%02x:%02x:%02x:%02x:%02x", bytes[0], bytes[1], bytes[2],
                  bytes[3], bytes[4], bytes[5]);
    return std::string(buf);
}

std::uint64_t mac_key(const MacAddress& mac) {
    std::uint64_t key = 0;
    for (const auto b : mac.bytes) key = (key << 8) | b;
    return key;
}

}  // namespace csifp
