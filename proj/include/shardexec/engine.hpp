#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "shardexec/batch.hpp"
#include "shardexec/config.hpp"
#include "shardexec/sequencer.hpp"
#include "shardexec/simnet.hpp"
#include "shardexec/worker.hpp"

namespace shardexec {

struct EngineOptions {
    EngineConfig cfg;
    SimNet::Options net;
    uint64_t commit_pace = 2000;       // sim us between commit entries
    uint64_t run_budget = 600'000'000;  // abort the run past this sim time
    // After every delivered event: each live worker holds at most
    // checkpoint_limit images and sits at or under its execution gate.
    bool strict_invariants = true;
    std::filesystem::path dir;  // persistence root; empty disables storage
};

// One full in-process deployment over the simulator: a primary feeding the
// commit sequence at a fixed pace, every sequencing worker, and the
// n_clusters x n_shards execution grid. Faults scheduled on the network tear
// a worker's volatile state down and rebuild it from persistence on the way
// back up.
class Engine {
public:
    Engine(EngineOptions opt, std::vector<Object> genesis, std::vector<Batch> batches);

    void schedule_fault(uint64_t time, const WorkerId& w, bool up);
    void slow_worker(const WorkerId& w, uint64_t factor);
    void slow_row(uint16_t row, uint64_t factor);
    // Extra per-delivery observer (runs after the engine's own bookkeeping).
    void add_observer(SimNet::Tracer t);

    // Drains the run, then checks that every live worker finished the whole
    // sequence and left recovery. Throws ProtocolError on stall or breach.
    void run();

    uint64_t total_txs() const { return total_txs_; }
    SimNet& net() { return net_; }
    ExecutionWorker* worker(uint16_t row, uint16_t shard);
    const ExecutionWorker* worker(uint16_t row, uint16_t shard) const;

    // Agreement across rows: every fully-live row must expose the same state
    // and the same abort history. Returns the common state digest.
    Digest final_digest() const;
    std::optional<Digest> row_digest(uint16_t row) const;
    std::map<uint64_t, bool> abort_flags() const;
    uint64_t aborted_count() const;
    uint64_t executed_count() const;

    uint64_t submit_time(uint64_t idx) const;
    // First sim time any worker's watermark covered idx.
    uint64_t first_done_time(uint64_t idx) const;
    uint64_t max_row_lead() const { return max_row_lead_; }

private:
    void dispatch_primary(const Envelope& env);
    void dispatch_sequencer(uint32_t q, const Envelope& env);
    void fan_out(uint32_t seq, const std::vector<std::pair<uint32_t, ProposeMsg>>& out);
    void on_delivery(uint64_t time, const Envelope& env);
    void check_invariants() const;
    void sweep_progress(uint64_t time);

    EngineOptions opt_;
    std::vector<Object> genesis_;
    std::vector<Batch> batches_;
    std::vector<CommitEntry> entries_;
    uint64_t total_txs_ = 0;

    SimNet net_;
    std::vector<std::unique_ptr<SequencingWorker>> seqs_;
    std::vector<std::unique_ptr<ExecutionWorker>> grid_;  // row-major
    size_t sent_entries_ = 0;

    std::vector<uint64_t> submit_;     // 1-based tx index -> sim time
    std::vector<uint64_t> first_done_;
    uint64_t done_high_ = 0;
    uint64_t max_row_lead_ = 0;
    std::vector<SimNet::Tracer> observers_;
};

}  // namespace shardexec
