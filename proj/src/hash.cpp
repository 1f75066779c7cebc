#include "shardexec/hash.hpp"

#include <openssl/sha.h>

namespace shardexec {

Digest sha256(std::span<const uint8_t> data) {
    Digest out;
    SHA256(data.data(), data.size(), out.data());
    return out;
}

static const char* kHexDigits = "0123456789abcdef";

std::string hex(const Digest& d) {
    std::string s;
    s.reserve(64);
    for (uint8_t b : d) {
        s.push_back(kHexDigits[b >> 4]);
        s.push_back(kHexDigits[b & 0xf]);
    }
    return s;
}

std::string short_hex(const Digest& d) {
    std::string s;
    for (int i = 0; i < 4; i++) {
        s.push_back(kHexDigits[d[i] >> 4]);
        s.push_back(kHexDigits[d[i] & 0xf]);
    }
    return s;
}

}  // namespace shardexec
