#pragma once

#include <map>
#include <vector>

#include "shardexec/batch.hpp"
#include "shardexec/config.hpp"
#include "shardexec/object.hpp"

namespace shardexec {

// Seeded synthetic workload. Identical spec, identical workload, on every
// platform; all randomness comes from the project RNG.
struct WorkloadSpec {
    uint64_t seed = 1;
    uint32_t n_shards = 1;
    uint32_t n_txs = 100;
    uint32_t batch_size = 20;

    uint32_t n_coins = 16;
    uint32_t n_counters = 8;
    uint32_t n_tables = 4;
    uint32_t children_per_table = 8;

    // Relative weights of the entry kinds. Dynamic accesses are skipped
    // when allow_dynamic is false (base mode cannot reschedule mid-run) or
    // when every (table, key) pair has been used; each pair is touched at
    // most once per workload so augmentations never contend on one child.
    uint32_t w_transfer = 4;
    uint32_t w_fib = 1;
    uint32_t w_counter = 3;
    uint32_t w_dynamic = 2;
    bool allow_dynamic = true;

    uint64_t fib_arg = 10;
    // Fraction of dynamic accesses aimed at a key the table never had.
    double phantom_child_fraction = 0.0;
};

struct Workload {
    std::vector<Object> genesis;
    std::vector<Batch> batches;

    std::vector<Transaction> flat() const;
    uint64_t total_txs() const;
};

Workload generate_workload(const WorkloadSpec& spec);

// The three measured workloads: pairwise-disjoint transfers, pairwise-
// disjoint coin merges with a tunable compute knob, and counters shared by
// a fixed number of transactions each. None of them ever aborts.
enum class BenchKind : uint8_t { transfers, merge_fib, counters };

const char* bench_name(BenchKind k);
bool parse_bench(const char* s, BenchKind& out);

struct BenchSpec {
    BenchKind kind = BenchKind::transfers;
    uint64_t seed = 1;
    uint32_t n_shards = 1;
    uint32_t n_txs = 1000;
    uint32_t batch_size = 50;
    uint64_t fib_arg = 5000;        // merge_fib: iterations burned per transaction
    uint32_t txs_per_counter = 10;  // counters: writers sharing one counter
};

Workload generate_bench(const BenchSpec& spec);

// Reference semantics: the committed sequence applied one transaction at a
// time against a single live map, sharing only the VM with the engine.
struct OracleResult {
    std::map<ObjectId, Object> state;
    std::map<uint64_t, bool> abort_flags;
    Digest digest() const;
};

OracleResult run_oracle(const std::vector<Object>& genesis,
                        const std::vector<Transaction>& txs);

}  // namespace shardexec
