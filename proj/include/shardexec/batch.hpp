#pragma once

#include <cstdint>
#include <vector>

#include "shardexec/bytes.hpp"
#include "shardexec/hash.hpp"
#include "shardexec/tx.hpp"

namespace shardexec {

struct Batch {
    BatchId id{};
    std::vector<Transaction> txs;

    bool operator==(const Batch&) const = default;

    // Id over the transaction list only, so the id is fixed before the batch
    // is sequenced.
    static BatchId compute_id(const std::vector<Transaction>& txs) {
        Writer w;
        w.u32(static_cast<uint32_t>(txs.size()));
        for (const auto& t : txs) t.encode(w);
        return sha256(w.bytes());
    }

    void encode(Writer& w) const {
        w.bytes32(id);
        w.u32(static_cast<uint32_t>(txs.size()));
        for (const auto& t : txs) t.encode(w);
    }
    static Batch decode(Reader& r) {
        Batch b;
        b.id = r.bytes32();
        uint32_t n = r.count(49);
        b.txs.reserve(n);
        for (uint32_t i = 0; i < n; i++) b.txs.push_back(Transaction::decode(r));
        return b;
    }
};

struct CommitEntry {
    uint64_t batch_idx = 0;  // 0-based, gapless
    BatchId batch_id{};

    bool operator==(const CommitEntry&) const = default;

    void encode(Writer& w) const {
        w.u64(batch_idx);
        w.bytes32(batch_id);
    }
    static CommitEntry decode(Reader& r) {
        CommitEntry e;
        e.batch_idx = r.u64();
        e.batch_id = r.bytes32();
        return e;
    }
};

}  // namespace shardexec
