#include "shardexec/workload.hpp"

#include <algorithm>
#include <string_view>

#include "shardexec/errors.hpp"
#include "shardexec/ids.hpp"
#include "shardexec/rng.hpp"
#include "shardexec/store.hpp"
#include "shardexec/vm.hpp"

namespace shardexec {

namespace {

// Deterministic id that lands on the given shard.
ObjectId place_oid(uint64_t seed, uint64_t tag, uint64_t ordinal, uint32_t shard,
                   uint32_t n_shards) {
    for (uint64_t salt = 0;; salt++) {
        Writer w;
        w.u64(seed);
        w.u64(tag);
        w.u64(ordinal);
        w.u64(salt);
        Digest d = sha256(w.bytes());
        if (shard_of(d, n_shards) == shard) return d;
    }
}

Digest workload_tx_digest(uint64_t seed, uint64_t index) {
    Writer w;
    w.u64(seed);
    w.u64(0x74786469ULL);
    w.u64(index);
    return sha256(w.bytes());
}

std::vector<Batch> pack_batches(std::vector<Transaction> all, uint32_t batch_size) {
    std::vector<Batch> out;
    for (size_t off = 0; off < all.size(); off += batch_size) {
        Batch b;
        size_t end = std::min(all.size(), off + batch_size);
        b.txs.assign(all.begin() + long(off), all.begin() + long(end));
        b.id = Batch::compute_id(b.txs);
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace

std::vector<Transaction> Workload::flat() const {
    std::vector<Transaction> out;
    for (const auto& b : batches) out.insert(out.end(), b.txs.begin(), b.txs.end());
    return out;
}

uint64_t Workload::total_txs() const {
    uint64_t n = 0;
    for (const auto& b : batches) n += b.txs.size();
    return n;
}

Workload generate_workload(const WorkloadSpec& spec) {
    if (spec.n_coins < 2 || spec.batch_size == 0)
        throw ProtocolError(ProtocolError::Kind::bad_state, "degenerate workload spec");
    Rng rng(spec.seed);
    Workload w;

    std::vector<ObjectId> coins(spec.n_coins);
    for (uint32_t i = 0; i < spec.n_coins; i++) {
        coins[i] = place_oid(spec.seed, 1, i, i % spec.n_shards, spec.n_shards);
        w.genesis.push_back(Object{coins[i], 0, {}, Coin{500 + (uint64_t(i) * 137) % 1000}});
    }
    std::vector<ObjectId> counters(spec.n_counters);
    for (uint32_t i = 0; i < spec.n_counters; i++) {
        counters[i] = place_oid(spec.seed, 2, i, i % spec.n_shards, spec.n_shards);
        w.genesis.push_back(Object{counters[i], 0, {}, Counter{0}});
    }
    std::vector<ObjectId> tables(spec.n_tables);
    for (uint32_t t = 0; t < spec.n_tables; t++) {
        tables[t] = place_oid(spec.seed, 3, t, t % spec.n_shards, spec.n_shards);
        Table tab;
        for (uint32_t k = 0; k < spec.children_per_table; k++) {
            ObjectId kid = place_oid(spec.seed, 4, uint64_t(t) << 32 | k, (t + k) % spec.n_shards,
                                     spec.n_shards);
            tab.children[k] = kid;
            w.genesis.push_back(Object{kid, 0, tables[t], Counter{0}});
        }
        w.genesis.push_back(Object{tables[t], 0, {}, tab});
    }

    // Each (table, key) pair is visited at most once per workload, so two
    // augmentations never race on one child.
    std::vector<std::pair<uint32_t, uint32_t>> pairs;
    for (uint32_t t = 0; t < spec.n_tables; t++)
        for (uint32_t k = 0; k < spec.children_per_table; k++) pairs.emplace_back(t, k);
    for (size_t i = pairs.size(); i > 1; i--)
        std::swap(pairs[i - 1], pairs[rng.below(i)]);
    size_t next_pair = 0;

    std::vector<bool> coin_gone(spec.n_coins, false);
    uint32_t live_coins = spec.n_coins;
    auto pick_live_coin = [&](uint32_t avoid) {
        for (;;) {
            uint32_t i = uint32_t(rng.below(spec.n_coins));
            if (!coin_gone[i] && i != avoid) return i;
        }
    };

    std::vector<Transaction> all;
    for (uint64_t idx = 1; idx <= spec.n_txs; idx++) {
        Transaction t;
        t.digest = workload_tx_digest(spec.seed, idx);
        t.index = idx;

        bool dyn_ok = spec.allow_dynamic && spec.n_tables > 0 && next_pair < pairs.size();
        uint32_t total = spec.w_transfer + spec.w_fib + spec.w_counter +
                         (dyn_ok ? spec.w_dynamic : 0);
        uint64_t roll = rng.below(total);

        if (roll < spec.w_transfer && live_coins >= 2) {
            uint32_t a = pick_live_coin(UINT32_MAX);
            uint32_t b = pick_live_coin(a);
            t.write_set = {coins[a], coins[b]};
            t.entry = {Entry::transfer, 1 + rng.below(20)};
        } else if (roll < spec.w_transfer + spec.w_fib && live_coins >= 3) {
            // Keep at least two coins alive for later transfers.
            uint32_t a = pick_live_coin(UINT32_MAX);
            uint32_t b = pick_live_coin(a);
            t.write_set = {coins[a], coins[b]};
            t.entry = {Entry::merge_and_fib, spec.fib_arg};
            coin_gone[a] = true;
            live_coins--;
        } else if (dyn_ok && roll >= uint64_t(spec.w_transfer) + spec.w_fib + spec.w_counter) {
            auto [tab, key] = pairs[next_pair++];
            t.read_set = {tables[tab]};
            uint64_t k = key;
            if (rng.unit() < spec.phantom_child_fraction) k = spec.children_per_table + key;
            t.entry = {Entry::dynamic_child_access, k};
        } else {
            uint32_t n = spec.n_counters == 0 ? 0 : 1 + uint32_t(rng.below(std::min(3u, spec.n_counters)));
            std::vector<uint32_t> picked;
            while (picked.size() < n) {
                uint32_t c = uint32_t(rng.below(spec.n_counters));
                if (std::find(picked.begin(), picked.end(), c) == picked.end())
                    picked.push_back(c);
            }
            if (picked.empty()) {  // no counters configured: fall back to a transfer
                uint32_t a = pick_live_coin(UINT32_MAX);
                uint32_t b = pick_live_coin(a);
                t.write_set = {coins[a], coins[b]};
                t.entry = {Entry::transfer, 1};
            } else {
                for (uint32_t c : picked) t.write_set.push_back(counters[c]);
                t.entry = {Entry::increment_counter, 0};
            }
        }
        all.push_back(std::move(t));
    }

    w.batches = pack_batches(std::move(all), spec.batch_size);
    return w;
}

const char* bench_name(BenchKind k) {
    switch (k) {
        case BenchKind::transfers: return "transfers";
        case BenchKind::merge_fib: return "merge_fib";
        case BenchKind::counters: return "counters";
    }
    return "?";
}

bool parse_bench(const char* s, BenchKind& out) {
    for (BenchKind k : {BenchKind::transfers, BenchKind::merge_fib, BenchKind::counters})
        if (std::string_view(s) == bench_name(k)) {
            out = k;
            return true;
        }
    return false;
}

Workload generate_bench(const BenchSpec& spec) {
    if (spec.n_txs == 0 || spec.batch_size == 0 || spec.n_shards == 0)
        throw ProtocolError(ProtocolError::Kind::bad_state, "degenerate bench spec");
    Workload w;
    std::vector<Transaction> all;
    all.reserve(spec.n_txs);

    switch (spec.kind) {
        case BenchKind::transfers:
        case BenchKind::merge_fib:
            // Fresh coin pair per transaction, both coins on one shard: no
            // two transactions share an object, and each executes where its
            // objects live, so the load spreads evenly across shards.
            for (uint32_t i = 0; i < spec.n_txs; i++) {
                uint32_t shard = i % spec.n_shards;
                ObjectId a = place_oid(spec.seed, 10, uint64_t(i) * 2, shard, spec.n_shards);
                ObjectId b = place_oid(spec.seed, 10, uint64_t(i) * 2 + 1, shard, spec.n_shards);
                w.genesis.push_back(Object{a, 0, {}, Coin{1000}});
                w.genesis.push_back(Object{b, 0, {}, Coin{1000}});
                Transaction t;
                t.digest = workload_tx_digest(spec.seed, i + 1);
                t.index = i + 1;
                t.write_set = {a, b};
                if (spec.kind == BenchKind::transfers)
                    t.entry = {Entry::transfer, 1 + i % 100};
                else
                    t.entry = {Entry::merge_and_fib, spec.fib_arg};
                all.push_back(std::move(t));
            }
            break;
        case BenchKind::counters: {
            if (spec.txs_per_counter == 0)
                throw ProtocolError(ProtocolError::Kind::bad_state, "degenerate bench spec");
            uint32_t n_counters =
                (spec.n_txs + spec.txs_per_counter - 1) / spec.txs_per_counter;
            std::vector<ObjectId> counters(n_counters);
            for (uint32_t c = 0; c < n_counters; c++) {
                counters[c] = place_oid(spec.seed, 11, c, c % spec.n_shards, spec.n_shards);
                w.genesis.push_back(Object{counters[c], 0, {}, Counter{0}});
            }
            // Round-robin keeps consecutive commits on different counters;
            // each counter still collects txs_per_counter writers over the
            // run, which is the contention knob.
            for (uint32_t i = 0; i < spec.n_txs; i++) {
                Transaction t;
                t.digest = workload_tx_digest(spec.seed, i + 1);
                t.index = i + 1;
                t.write_set = {counters[i % n_counters]};
                t.entry = {Entry::increment_counter, 0};
                all.push_back(std::move(t));
            }
            break;
        }
    }
    w.batches = pack_batches(std::move(all), spec.batch_size);
    return w;
}

Digest OracleResult::digest() const {
    return digest_of_state(state);
}

OracleResult run_oracle(const std::vector<Object>& genesis,
                        const std::vector<Transaction>& txs) {
    OracleResult res;
    for (const auto& o : genesis) res.state[o.id] = o;

    for (const auto& orig : txs) {
        Transaction t = orig;
        vm::VmResult r;
        for (int round = 0;; round++) {
            if (round > 8)
                throw ProtocolError(ProtocolError::Kind::bad_state,
                                    "runaway discovery at tx " + std::to_string(t.index));
            vm::InputMap in;
            t.for_each_ref([&](const ObjectId& id) {
                auto it = res.state.find(id);
                if (it != res.state.end()) in.emplace(id, it->second);
            });
            r = vm::execute(t, in);
            if (r.discovered) {
                t.added_writes.push_back(r.discovered->child);
                continue;
            }
            break;
        }
        if (!r.aborted) {
            for (const auto& o : r.mutated) res.state[o.id] = o;
            for (const auto& d : r.deleted) res.state.erase(d);
        }
        res.abort_flags[t.index] = r.aborted;
    }
    return res;
}

}  // namespace shardexec
