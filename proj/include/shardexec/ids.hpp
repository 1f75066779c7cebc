#pragma once

#include <compare>
#include <cstdint>
#include <string>

#include "shardexec/bytes.hpp"
#include "shardexec/hash.hpp"

namespace shardexec {

// Object ids, transaction digests and batch ids are all 32-byte SHA-256
// values; the aliases only mark intent.
using ObjectId = Digest;
using BatchId = Digest;

// Shard assignment: first 8 bytes of the id as a big-endian integer, mod the
// shard count. Same rule assigns batches to sequencers.
inline uint64_t id_prefix(const Digest& id) {
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v = (v << 8) | id[i];
    return v;
}

inline uint32_t shard_of(const ObjectId& id, uint32_t n_shards) {
    return static_cast<uint32_t>(id_prefix(id) % n_shards);
}

inline uint32_t sequencer_of(const BatchId& id, uint32_t n_sequencers) {
    return static_cast<uint32_t>(id_prefix(id) % n_sequencers);
}

struct WorkerId {
    enum Kind : uint8_t { primary = 0, sequencer = 1, execution = 2, harness = 3 };

    uint8_t kind = primary;
    uint16_t row = 0;    // cluster row for execution workers
    uint16_t index = 0;  // shard for execution workers, position for sequencers

    static WorkerId make_primary() { return {primary, 0, 0}; }
    static WorkerId make_sequencer(uint16_t i) { return {sequencer, 0, i}; }
    static WorkerId make_execution(uint16_t cluster, uint16_t shard) { return {execution, cluster, shard}; }
    static WorkerId make_harness() { return {harness, 0, 0}; }

    auto operator<=>(const WorkerId&) const = default;

    uint32_t key() const { return (uint32_t(kind) << 24) | (uint32_t(row) << 12) | index; }
    static WorkerId from_key(uint32_t k) {
        return {uint8_t(k >> 24), uint16_t((k >> 12) & 0xFFF), uint16_t(k & 0xFFF)};
    }

    std::string str() const {
        switch (kind) {
            case primary: return "P";
            case sequencer: return "S" + std::to_string(index);
            case execution: return "E(" + std::to_string(row) + "," + std::to_string(index) + ")";
            default: return "H";
        }
    }

    void encode(Writer& w) const {
        w.u8(kind);
        w.u16(row);
        w.u16(index);
    }
    static WorkerId decode(Reader& r) {
        WorkerId id;
        id.kind = r.u8();
        if (id.kind > harness) throw CodecError("bad worker kind");
        id.row = r.u16();
        id.index = r.u16();
        return id;
    }
};

struct WorkerIdHash {
    size_t operator()(const WorkerId& w) const { return w.key(); }
};

}  // namespace shardexec
