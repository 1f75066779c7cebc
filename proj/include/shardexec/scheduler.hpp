#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "shardexec/config.hpp"
#include "shardexec/message.hpp"
#include "shardexec/store.hpp"
#include "shardexec/tx.hpp"

namespace shardexec {

// Per-object ordered queue of operation groups. A write group is a single
// transaction; consecutive reads merge into one group and may run in
// parallel. Group order is the commit order projected onto the object.
class PendingQueues {
public:
    struct OpGroup {
        bool write = false;
        std::vector<uint64_t> txs;  // tx indices, insertion order
    };

    void enqueue_write(const ObjectId& oid, uint64_t idx);
    void enqueue_read(const ObjectId& oid, uint64_t idx);
    bool at_head(const ObjectId& oid, uint64_t idx) const;
    // Removes idx from the head group of oid's queue; throws not_at_head
    // otherwise. When the head group empties, returns the transactions of
    // the next group (the new heads); empty queues are deleted.
    std::vector<uint64_t> advance(const ObjectId& oid, uint64_t idx);

    bool has_queue(const ObjectId& oid) const { return q_.contains(oid); }
    size_t queue_count() const { return q_.size(); }
    const std::deque<OpGroup>* queue(const ObjectId& oid) const;

    std::string dump(const std::function<std::string(const ObjectId&)>& name_of) const;
    void validate_acyclic() const;

private:
    std::unordered_map<ObjectId, std::deque<OpGroup>, DigestHash> q_;
};

// Version labels and waiting edges for split mode. Label v names the value
// produced by the v-th scheduled write of an object; label 0 is the pre-run
// state. Readers wait on the pending writer of their version; writers wait
// on the prior writer (they consume its value) but never on readers.
struct TxLabels {
    struct Read {
        ObjectId oid;
        uint64_t in = 0;
    };
    struct Write {
        ObjectId oid;
        uint64_t in = 0;
        uint64_t out = 0;
    };
    std::vector<Read> reads;
    std::vector<Write> writes;
};

class SplitQueues {
public:
    // Registers the shard-local refs of tx and returns its labels.
    TxLabels insert(const Transaction& tx, uint32_t shard, uint32_t n_shards);
    // Augmentation: one discovered object joins an already-registered tx.
    void insert_one(TxLabels& labels, uint64_t idx, const ObjectId& oid, bool is_write);

    bool blocked(uint64_t idx) const;
    // Clears edges owned by idx; returns transactions that became unblocked.
    std::vector<uint64_t> advance(uint64_t idx, const TxLabels& labels);

    std::vector<std::pair<uint64_t, uint64_t>> waiting_edges() const;  // (waiter, waited_on)
    void validate_acyclic() const;

private:
    void add_edge(uint64_t waiter, uint64_t on);

    std::unordered_map<ObjectId, uint64_t, DigestHash> current_writer_;
    std::unordered_map<ObjectId, uint64_t, DigestHash> next_label_;
    std::map<uint64_t, std::set<uint64_t>> waiting_on_;
    std::map<uint64_t, std::set<uint64_t>> waited_on_by_;
};

// Propose intake. Batch index i is released only when one message per
// sequencer has arrived for it and every index below is done.
class ProposeBuffer {
public:
    explicit ProposeBuffer(uint32_t n_sequencers, uint64_t first_batch = 0)
        : n_sequencers_(n_sequencers), next_(first_batch) {}

    // False: identical redelivery, ignore. Throws duplicate_propose when the
    // same (batch_idx, sequencer) arrives with different content.
    bool add(const ProposeMsg& msg);
    bool complete_next() const;
    std::vector<ProposeMsg> pop_next();  // ordered by sequencer id
    uint64_t watermark() const { return next_; }
    size_t buffered() const { return pending_.size(); }

private:
    uint32_t n_sequencers_;
    uint64_t next_ = 0;
    std::map<uint64_t, std::map<uint32_t, std::vector<uint8_t>>> pending_;  // encoded msgs
};

// Transactions whose trigger stalled on an absent object (or version).
// Key label is 0 outside split mode. A parked transaction re-triggers when
// the key materializes or when the watermark proves it never will.
class MissingIndex {
public:
    using Key = std::pair<ObjectId, uint64_t>;

    void park(const Key& key, uint64_t idx);
    std::vector<uint64_t> on_available(const Key& key);
    std::vector<uint64_t> on_watermark(uint64_t j);  // txs with idx <= j+1
    void forget(uint64_t idx);
    bool parked(uint64_t idx) const { return by_tx_.contains(idx); }
    size_t size() const { return by_tx_.size(); }

private:
    std::map<Key, std::set<uint64_t>> by_key_;
    std::map<uint64_t, std::set<Key>> by_tx_;
};

struct TriggerResult {
    bool sent = false;
    std::vector<ObjSlot> slots;       // sorted by oid
    std::vector<uint64_t> follow_up;  // base mode: new heads after read release
};

// One shard's scheduling state: propose intake, queues, missing index and
// per-transaction bookkeeping. The owning worker supplies the store view and
// its executed watermark j.
class Scheduler {
public:
    // first_batch: where the propose stream resumes after a checkpoint
    // restore; 0 for a fresh boot.
    Scheduler(Mode mode, uint32_t shard, uint32_t n_shards, uint32_t n_sequencers,
              uint64_t first_batch = 0);

    std::vector<uint64_t> process_propose(const ProposeMsg& msg, uint64_t j);

    TriggerResult try_trigger(uint64_t idx, const StoreView& store, uint64_t j);

    bool known(uint64_t idx) const { return states_.contains(idx); }
    bool executed(uint64_t idx) const;
    bool ready_sent(uint64_t idx) const;
    // True when every lock idx holds is at its queue head (split: unblocked),
    // so a result for idx can be applied now.
    bool advanceable(uint64_t idx) const;
    std::vector<uint64_t> on_result(uint64_t idx);
    std::vector<uint64_t> on_materialized(const ObjectId& oid, uint64_t label);
    std::vector<uint64_t> on_watermark(uint64_t j);
    std::vector<uint64_t> apply_augmentation(const Transaction& aug);

    const Transaction* tx(uint64_t idx) const;
    const TxLabels* labels(uint64_t idx) const;
    // Drops executed per-tx state at or below j. Batch ranges live until they
    // also fall at or below range_floor (the newest checkpoint boundary), so
    // resume_batch_for stays answerable for every future boundary.
    void purge_below(uint64_t j, uint64_t range_floor);
    void purge_below(uint64_t j) { purge_below(j, j); }

    uint64_t propose_watermark() const { return buffer_.watermark(); }
    // Highest transaction index covered by a released batch. An index at or
    // below this that was never registered provably has no refs on this shard.
    uint64_t released_through() const { return released_max_; }
    // Batch to resume from so that transaction boundary+1 is re-delivered.
    uint64_t resume_batch_for(uint64_t boundary) const;

    size_t scheduled_live() const { return states_.size(); }
    std::string dump_queues(const std::function<std::string(const ObjectId&)>& name_of) const;
    void validate_acyclic() const;
    std::vector<std::pair<uint64_t, uint64_t>> waiting_edges() const { return split_.waiting_edges(); }

    Mode mode() const { return mode_; }
    uint32_t shard() const { return shard_; }

private:
    struct TxState {
        Transaction tx;
        TxLabels labels;  // split mode only
        bool ready_sent = false;
        bool executed = false;
    };

    void register_tx(const Transaction& tx);
    // Unique shard-local refs in canonical order (reads then writes).
    std::vector<std::pair<ObjectId, bool>> handled_refs(const Transaction& tx) const;

    Mode mode_;
    uint32_t shard_;
    uint32_t n_shards_;
    ProposeBuffer buffer_;
    PendingQueues queues_;
    SplitQueues split_;
    MissingIndex missing_;
    std::map<uint64_t, TxState> states_;
    std::map<uint64_t, std::pair<uint64_t, uint64_t>> batch_ranges_;  // batch_idx -> [first, last]
    uint64_t released_max_ = 0;
};

}  // namespace shardexec
