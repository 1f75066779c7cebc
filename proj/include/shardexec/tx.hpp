#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "shardexec/bytes.hpp"
#include "shardexec/ids.hpp"

namespace shardexec {

enum class Entry : uint8_t {
    transfer = 1,              // arg = amount; debits write_set[0], credits write_set[1]
    merge_and_fib = 2,         // arg = n; deletes write_set[0] into write_set[1], burns fib(n)
    increment_counter = 3,     // bumps every counter in the write set
    dynamic_child_access = 4,  // arg = key; mutates the child under key in the parent table
};

struct EntryCall {
    Entry kind = Entry::increment_counter;
    uint64_t arg = 0;
    bool operator==(const EntryCall&) const = default;
};

struct Transaction {
    Digest digest{};
    uint64_t index = 0;  // 1-based position in the committed sequence
    std::vector<ObjectId> read_set;
    std::vector<ObjectId> write_set;
    // Objects discovered during execution, in augmentation order. The
    // declared sets above never change, so every worker derives the same
    // executor regardless of how many augmentation rounds it has seen.
    std::vector<ObjectId> added_reads;
    std::vector<ObjectId> added_writes;
    EntryCall entry;

    bool operator==(const Transaction&) const = default;

    uint32_t aug_rounds() const { return static_cast<uint32_t>(added_reads.size() + added_writes.size()); }

    template <typename F>
    void for_each_read(F&& f) const {
        for (const auto& id : read_set) f(id);
        for (const auto& id : added_reads) f(id);
    }
    template <typename F>
    void for_each_write(F&& f) const {
        for (const auto& id : write_set) f(id);
        for (const auto& id : added_writes) f(id);
    }
    template <typename F>
    void for_each_ref(F&& f) const {
        for_each_read(f);
        for_each_write(f);
    }

    bool references_shard(uint32_t shard, uint32_t n_shards) const {
        bool hit = false;
        for_each_ref([&](const ObjectId& id) { hit = hit || shard_of(id, n_shards) == shard; });
        return hit;
    }

    // Ids this shard handles, declared and discovered, in set order.
    std::vector<ObjectId> handled_ids(uint32_t shard, uint32_t n_shards) const {
        std::vector<ObjectId> out;
        for_each_ref([&](const ObjectId& id) {
            if (shard_of(id, n_shards) == shard) out.push_back(id);
        });
        return out;
    }

    size_t ref_count() const {
        return read_set.size() + write_set.size() + added_reads.size() + added_writes.size();
    }

    void encode(Writer& w) const {
        w.bytes32(digest);
        w.u64(index);
        auto ids = [&w](const std::vector<ObjectId>& v) {
            w.u32(static_cast<uint32_t>(v.size()));
            for (const auto& id : v) w.bytes32(id);
        };
        ids(read_set);
        ids(write_set);
        ids(added_reads);
        ids(added_writes);
        w.u8(static_cast<uint8_t>(entry.kind));
        w.u64(entry.arg);
    }

    static Transaction decode(Reader& r) {
        Transaction t;
        t.digest = r.bytes32();
        t.index = r.u64();
        auto ids = [&r](std::vector<ObjectId>& v) {
            uint32_t n = r.count(32);
            v.reserve(n);
            for (uint32_t i = 0; i < n; i++) v.push_back(r.bytes32());
        };
        ids(t.read_set);
        ids(t.write_set);
        ids(t.added_reads);
        ids(t.added_writes);
        uint8_t k = r.u8();
        if (k < 1 || k > 4) throw CodecError("bad entry kind");
        t.entry.kind = static_cast<Entry>(k);
        t.entry.arg = r.u64();
        return t;
    }
};

// The executing shard is the one handling the most referenced objects, ties
// to the smallest shard index. Counts only the declared sets.
inline uint32_t executor_of(const Transaction& tx, uint32_t n_shards) {
    std::vector<uint32_t> counts(n_shards, 0);
    for (const auto& id : tx.read_set) counts[shard_of(id, n_shards)]++;
    for (const auto& id : tx.write_set) counts[shard_of(id, n_shards)]++;
    uint32_t best = 0;
    for (uint32_t s = 1; s < n_shards; s++)
        if (counts[s] > counts[best]) best = s;
    return best;
}

}  // namespace shardexec
