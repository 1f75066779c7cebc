#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace shardexec {

// All identifiers and content digests are SHA-256. One hash everywhere keeps
// checkpoint digests, batch ids and object ids interchangeable 32-byte values.
using Digest = std::array<uint8_t, 32>;

Digest sha256(std::span<const uint8_t> data);
std::string hex(const Digest& d);
std::string short_hex(const Digest& d);  // first 4 bytes, for logs

struct DigestHash {
    size_t operator()(const Digest& d) const {
        uint64_t v = 0;
        for (int i = 0; i < 8; i++) v = (v << 8) | d[i];
        return static_cast<size_t>(v);
    }
};

}  // namespace shardexec
