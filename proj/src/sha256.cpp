#include "csifp/sha256.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace csifp {

Sha256Digest sha256(const void* data, std::size_t len) {
    Sha256Digest digest{};
    unsigned int out_len = 0;
    if (EVP_Digest(data, len, digest.data(), &out_len, EVP_sha256(), nullptr) != 1 ||
        out_len != digest.size()) {
        throw std::runtime_error("SHA-256 computation failed");
    }
    return digest;
}

Sha256Digest sha256(std::string_view text) { return sha256(text.data(), text.size()); }

std::string hex_string(const std::uint8_t* data, std::size_t len) {
    std::string out;
    out.reserve(len * 2);
    static const char* kHex = "0123456789abcdef";
    for (std::size_t i = 0; i < len; ++i) {
        out.push_back(kHex[data[i] >> 4]);
        out.push_back(kHex[data[i] & 0xf]);
    }
    return out;
}

std::string hex_string(const Sha256Digest& digest) { return hex_string(digest.data(), digest.size()); }

Sha256Digest sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file for hashing: " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("SHA-256 context allocation failed");
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    Sha256Digest digest{};
    unsigned int out_len = 0;
    EVP_DigestFinal_ex(ctx, digest.data(), &out_len);
    EVP_MD_CTX_free(ctx);
    if (out_len != digest.size()) throw std::runtime_error("SHA-256 finalization failed");
    return digest;
}

}  // namespace csifp
