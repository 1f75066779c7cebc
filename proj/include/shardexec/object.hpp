#pragma once

#include <cstdint>
#include <map>
#include <variant>

#include "shardexec/bytes.hpp"
#include "shardexec/ids.hpp"

namespace shardexec {

struct Coin {
    uint64_t balance = 0;
    bool operator==(const Coin&) const = default;
};

struct Counter {
    uint64_t value = 0;
    bool operator==(const Counter&) const = default;
};

// Maps small integer keys to child object ids. Ordered so encoding is
// canonical.
struct Table {
    std::map<uint64_t, ObjectId> children;
    bool operator==(const Table&) const = default;
};

using Payload = std::variant<Coin, Counter, Table>;

struct Object {
    ObjectId id{};
    uint64_t version = 0;  // 0 on creation, +1 per mutation
    ObjectId owner{};      // parent table id for child objects, zero otherwise
    Payload payload = Coin{};

    bool operator==(const Object&) const = default;

    void encode(Writer& w) const {
        w.bytes32(id);
        w.u64(version);
        w.bytes32(owner);
        w.u8(static_cast<uint8_t>(payload.index()));
        if (auto* c = std::get_if<Coin>(&payload)) {
            w.u64(c->balance);
        } else if (auto* c = std::get_if<Counter>(&payload)) {
            w.u64(c->value);
        } else {
            const auto& t = std::get<Table>(payload);
            w.u32(static_cast<uint32_t>(t.children.size()));
            for (const auto& [k, v] : t.children) {
                w.u64(k);
                w.bytes32(v);
            }
        }
    }

    static Object decode(Reader& r) {
        Object o;
        o.id = r.bytes32();
        o.version = r.u64();
        o.owner = r.bytes32();
        switch (r.u8()) {
            case 0: o.payload = Coin{r.u64()}; break;
            case 1: o.payload = Counter{r.u64()}; break;
            case 2: {
                Table t;
                uint32_t n = r.count(40);
                for (uint32_t i = 0; i < n; i++) {
                    uint64_t k = r.u64();
                    t.children[k] = r.bytes32();
                }
                o.payload = std::move(t);
                break;
            }
            default: throw CodecError("bad payload kind");
        }
        return o;
    }
};

}  // namespace shardexec
