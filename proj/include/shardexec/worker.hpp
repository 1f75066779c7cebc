#pragma once

#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "shardexec/checkpoint.hpp"
#include "shardexec/config.hpp"
#include "shardexec/net.hpp"
#include "shardexec/scheduler.hpp"
#include "shardexec/store.hpp"

namespace shardexec {

// One grid cell: schedules its own shard's objects and executes the
// transactions assigned to it. Within a row workers exchange ready slots and
// results; across rows only checkpoint notices travel, until a failure
// rewires who reads from whom.
//
// Execution is paced by the checkpoint protocol: no worker runs past
// stable + checkpoint_limit * checkpoint_every, so a lagging replica bounds
// how far the rest of the grid can drift from it.
class ExecutionWorker {
public:
    struct Counters {
        uint64_t vm_runs = 0;
        uint64_t applied = 0;  // results applied, aborts included
        uint64_t aborted = 0;
        uint64_t deferred_total = 0;  // messages parked on the execution gate
        uint64_t checkpoints_written = 0;
        uint64_t syncs = 0;
        uint64_t replays_served = 0;
    };

    // dir empty: no checkpoint persistence (reboot falls back to genesis).
    ExecutionWorker(WorkerId id, const EngineConfig& cfg, Net& net, std::filesystem::path dir,
                    std::vector<Object> genesis);

    void boot_fresh();
    // Crash restart: newest valid local checkpoint (or genesis), replay from
    // the sequencers, then re-register with a source for every other shard.
    void reboot();

    // Inbound dispatch. Self-addressed sends queue locally and drain before
    // this returns, so handlers never re-enter.
    void handle(const Envelope& env);

    uint64_t watermark() const { return j_; }
    uint64_t stable_boundary() const { return stable_; }
    uint64_t last_checkpoint() const { return last_cp_; }
    size_t checkpoints_held() const { return cps_.size(); }
    uint64_t exec_limit() const;
    bool syncing() const { return sync_.has_value(); }
    WorkerId id() const { return id_; }
    WorkerId read_source(uint32_t shard) const;
    const ObjectStore& store() const { return store_; }
    const Scheduler& scheduler() const { return sched_; }
    const std::map<uint64_t, bool>& abort_flags() const { return abort_flags_; }
    const Counters& counters() const { return counters_; }
    Digest state_digest() const { return store_.state_digest(); }
    size_t outgoing_buffered() const;

private:
    struct ReadyEntry {
        Transaction tx;
        bool have_tx = false;
        std::map<ObjectId, std::optional<Object>> slots;  // empty obj: does not exist
    };

    // Source replacement for one shard: quorum of column stables, then adopt
    // the freshest member as the new read source.
    struct Chain {
        enum Phase { status, adopt } phase = status;
        std::map<WorkerId, uint64_t> replies;
        WorkerId donor{};
        uint64_t txstar = 0;
    };

    // Row-wide resynchronization from a common checkpoint.
    struct Sync {
        enum Phase { get_status, fetch, confirm } phase = get_status;
        std::map<WorkerId, uint64_t> replies;
        WorkerId donor{};
        uint64_t txstar = 0;
        uint32_t retries = 0;
    };

    void dispatch(const Envelope& env);
    bool gate_defer(const Envelope& env, uint64_t idx);

    // normal path
    void on_propose(const ProposeMsg& msg);
    void on_ready(const Envelope& env, const ReadyMsg& msg);
    void on_result(const Envelope& env, const ResultMsg& msg);
    void on_aug(const Envelope& env, const AugProposeMsg& msg);
    void attempt_trigger(uint64_t idx);
    void maybe_execute(uint64_t idx);
    bool try_apply(const ResultMsg& msg);
    void apply_result(const ResultMsg& msg, bool local);
    void advance_watermark();
    void drain_pending();
    void broadcast_result(const Transaction& tx, bool aborted, std::vector<Object> mutated,
                          std::vector<ObjectId> deleted);

    // checkpoints
    void on_checkpointed(const WorkerId& src, const CheckpointedMsg& msg);
    void maybe_roll_and_advance();
    void take_checkpoint(uint64_t boundary);
    uint64_t compute_stable() const;
    void gc_below_stable();
    void broadcast_checkpointed();
    uint64_t newest_held() const { return cps_.empty() ? 0 : cps_.rbegin()->first; }

    // recovery
    void on_suspect(const SuspectMsg& msg);
    void on_recover(const WorkerId& src);
    void on_recover_ok(const WorkerId& src, const RecoverOkMsg& msg);
    void on_new_reader(const WorkerId& src, const NewReaderMsg& msg);
    void on_new_reader_ok(const WorkerId& src, const NewReaderOkMsg& msg);
    void on_recovery_abort(const WorkerId& src, const RecoveryAbortMsg& msg);
    void on_notify_sync(const WorkerId& src);
    void on_sync_request(const WorkerId& src, const SyncRequestMsg& msg);
    void on_sync_checkpoint(const SyncCheckpointMsg& msg);
    void on_sync_complete(const WorkerId& src, const SyncCompleteMsg& msg);
    void on_tick();
    void start_chain(uint32_t shard);
    void chain_quorum(uint32_t shard);
    void start_sync();
    void sync_quorum();
    void retry_sync(const char* why);
    void enter_confirm();
    void check_sync_done();
    void finish_sync();
    void restore_state(const Checkpoint& cp);
    void restore_genesis();
    void request_replay();

    // wiring
    void send(const WorkerId& dst, Message msg);
    void send_local(Message msg);
    void send_to_column(uint32_t col, uint64_t txid, Message msg);
    void arm_tick();
    std::vector<WorkerId> row_mates() const;          // same row, other shards
    std::vector<WorkerId> column(uint32_t shard) const;  // other rows of one shard

    WorkerId id_;
    EngineConfig cfg_;
    Net& net_;
    std::filesystem::path dir_;
    std::vector<Object> genesis_;

    ObjectStore store_;
    Scheduler sched_;
    uint64_t j_ = 0;
    std::set<uint64_t> done_above_;  // applied above j_, not yet contiguous
    std::map<uint64_t, ReadyEntry> ready_buf_;
    std::map<uint64_t, ResultMsg> pending_results_;  // raced ahead of propose or order
    std::map<uint64_t, Transaction> pending_augs_;
    std::deque<Envelope> local_q_;
    std::deque<Envelope> deferred_;
    uint64_t drained_limit_ = 0;
    bool draining_ = false;

    std::map<uint64_t, Checkpoint> cps_;
    uint64_t last_cp_ = 0;
    uint64_t stable_ = 0;
    std::map<uint32_t, std::map<uint16_t, uint64_t>> col_max_;  // shard -> row -> boundary
    uint64_t resume_batch_ = 0;

    // Outgoing ready/result/augment streams per destination shard, kept for
    // reader replay until the indices fall under a stable checkpoint.
    std::map<uint32_t, std::multimap<uint64_t, Message>> buffer_out_;
    std::map<uint32_t, WorkerId> read_from_;
    std::set<WorkerId> read_to_;
    std::set<WorkerId> suspected_;
    std::map<uint32_t, Chain> chains_;
    std::optional<Sync> sync_;
    std::map<WorkerId, uint64_t> completes_;  // peer -> boundary it reported synced
    bool tick_armed_ = false;

    Counters counters_;
    std::map<uint64_t, bool> abort_flags_;
};

}  // namespace shardexec
