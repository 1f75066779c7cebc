#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace shardexec {

// Canonical binary encoding used for wire frames, checkpoint files and
// digest preimages. Integers are fixed-width big-endian; containers are a
// u32 count followed by the elements. There is exactly one encoding per
// value, so equal values always produce equal bytes.

struct CodecError : std::runtime_error {
    explicit CodecError(const std::string& what) : std::runtime_error(what) {}
};

class Writer {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v) {
        buf_.push_back(static_cast<uint8_t>(v >> 8));
        buf_.push_back(static_cast<uint8_t>(v));
    }
    void u32(uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) buf_.push_back(static_cast<uint8_t>(v >> s));
    }
    void u64(uint64_t v) {
        for (int s = 56; s >= 0; s -= 8) buf_.push_back(static_cast<uint8_t>(v >> s));
    }
    void boolean(bool v) { u8(v ? 1 : 0); }
    void bytes32(const std::array<uint8_t, 32>& v) { buf_.insert(buf_.end(), v.begin(), v.end()); }
    void raw(std::span<const uint8_t> v) { buf_.insert(buf_.end(), v.begin(), v.end()); }
    void blob(std::span<const uint8_t> v) {
        u32(static_cast<uint32_t>(v.size()));
        raw(v);
    }

    size_t size() const { return buf_.size(); }
    const std::vector<uint8_t>& bytes() const { return buf_; }
    std::vector<uint8_t> take() { return std::move(buf_); }

private:
    std::vector<uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const uint8_t> data) : data_(data) {}

    uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>((data_[pos_] << 8) | data_[pos_ + 1]);
        pos_ += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; i++) v = (v << 8) | data_[pos_ + i];
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; i++) v = (v << 8) | data_[pos_ + i];
        pos_ += 8;
        return v;
    }
    bool boolean() {
        uint8_t v = u8();
        if (v > 1) throw CodecError("bad boolean");
        return v == 1;
    }
    std::array<uint8_t, 32> bytes32() {
        need(32);
        std::array<uint8_t, 32> v;
        std::memcpy(v.data(), data_.data() + pos_, 32);
        pos_ += 32;
        return v;
    }
    std::vector<uint8_t> blob() {
        uint32_t n = u32();
        need(n);
        std::vector<uint8_t> v(data_.begin() + pos_, data_.begin() + pos_ + n);
        pos_ += n;
        return v;
    }
    // Count prefix for a container; bounds the count by the bytes left so a
    // corrupt prefix cannot trigger a huge allocation.
    uint32_t count(size_t min_elem_size = 1) {
        uint32_t n = u32();
        if (min_elem_size > 0 && n > remaining() / min_elem_size) throw CodecError("bad count");
        return n;
    }

    size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }
    void expect_done() const {
        if (!done()) throw CodecError("trailing bytes");
    }

private:
    void need(size_t n) const {
        if (data_.size() - pos_ < n) throw CodecError("short read");
    }

    std::span<const uint8_t> data_;
    size_t pos_ = 0;
};

}  // namespace shardexec
