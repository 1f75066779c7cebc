#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "shardexec/batch.hpp"
#include "shardexec/bytes.hpp"
#include "shardexec/object.hpp"
#include "shardexec/tx.hpp"

namespace shardexec {

// Wire tags. Appended after the payload inside each socket frame; see
// docs/protocol.md for the frame layout and the per-message field tables.
enum class MsgType : uint8_t {
    commit_entry = 1,
    propose = 2,
    ready = 3,
    result = 4,
    aug_propose = 5,
    checkpointed = 6,
    recover = 7,
    recover_ok = 8,
    new_reader = 9,
    new_reader_ok = 10,
    recovery_abort = 11,
    notify_sync = 12,
    sync_request = 13,
    sync_checkpoint = 14,
    sync_complete = 15,
    replay_request = 16,
    suspect = 17,
    timer = 18,
    control = 19,
};

// Primary -> sequencers. One per committed batch, in commit order.
struct CommitEntryMsg {
    CommitEntry entry;
    void encode(Writer& w) const { entry.encode(w); }
    static CommitEntryMsg decode(Reader& r) { return {CommitEntry::decode(r)}; }
};

// Sequencer -> every execution worker of one shard. txs holds only the
// transactions referencing an object of the destination shard; an empty list
// is the heartbeat that lets the propose watermark advance. The owning
// sequencer also reports the batch's full index range (first_index/tx_count)
// so workers can map a checkpoint boundary back to a batch; heartbeats leave
// it zero.
struct ProposeMsg {
    uint64_t batch_idx = 0;
    BatchId batch_id{};
    uint32_t sequencer = 0;
    uint64_t first_index = 0;
    uint32_t tx_count = 0;
    std::vector<Transaction> txs;

    void encode(Writer& w) const {
        w.u64(batch_idx);
        w.bytes32(batch_id);
        w.u32(sequencer);
        w.u64(first_index);
        w.u32(tx_count);
        w.u32(static_cast<uint32_t>(txs.size()));
        for (const auto& t : txs) t.encode(w);
    }
    static ProposeMsg decode(Reader& r) {
        ProposeMsg m;
        m.batch_idx = r.u64();
        m.batch_id = r.bytes32();
        m.sequencer = r.u32();
        m.first_index = r.u64();
        m.tx_count = r.u32();
        uint32_t n = r.count(49);
        m.txs.reserve(n);
        for (uint32_t i = 0; i < n; i++) m.txs.push_back(Transaction::decode(r));
        return m;
    }
};

// One object slot carried by a ReadyMsg. An empty obj is the "object does
// not exist" marker; the executor aborts the transaction on any such slot.
struct ObjSlot {
    ObjectId oid{};
    std::optional<Object> obj;

    bool operator==(const ObjSlot&) const = default;

    void encode(Writer& w) const {
        w.bytes32(oid);
        w.boolean(obj.has_value());
        if (obj) obj->encode(w);
    }
    static ObjSlot decode(Reader& r) {
        ObjSlot s;
        s.oid = r.bytes32();
        if (r.boolean()) s.obj = Object::decode(r);
        return s;
    }
};

// Scheduling shard -> executing shard: this shard's slots for one
// transaction, sent when the transaction reached the head of its queues.
struct ReadyMsg {
    Transaction tx;
    std::vector<ObjSlot> slots;

    void encode(Writer& w) const {
        tx.encode(w);
        w.u32(static_cast<uint32_t>(slots.size()));
        for (const auto& s : slots) s.encode(w);
    }
    static ReadyMsg decode(Reader& r) {
        ReadyMsg m;
        m.tx = Transaction::decode(r);
        uint32_t n = r.count(33);
        m.slots.reserve(n);
        for (uint32_t i = 0; i < n; i++) m.slots.push_back(ObjSlot::decode(r));
        return m;
    }
};

// Executor -> every shard. Carries the destination shard's portion of the
// effects; empty portions still flow so every shard's watermark advances.
struct ResultMsg {
    Digest tx_digest{};
    uint64_t tx_index = 0;
    bool aborted = false;
    std::vector<Object> mutated;
    std::vector<ObjectId> deleted;

    void encode(Writer& w) const {
        w.bytes32(tx_digest);
        w.u64(tx_index);
        w.boolean(aborted);
        w.u32(static_cast<uint32_t>(mutated.size()));
        for (const auto& o : mutated) o.encode(w);
        w.u32(static_cast<uint32_t>(deleted.size()));
        for (const auto& d : deleted) w.bytes32(d);
    }
    static ResultMsg decode(Reader& r) {
        ResultMsg m;
        m.tx_digest = r.bytes32();
        m.tx_index = r.u64();
        m.aborted = r.boolean();
        uint32_t n = r.count(73);
        m.mutated.reserve(n);
        for (uint32_t i = 0; i < n; i++) m.mutated.push_back(Object::decode(r));
        n = r.count(32);
        m.deleted.reserve(n);
        for (uint32_t i = 0; i < n; i++) m.deleted.push_back(r.bytes32());
        return m;
    }
};

// Executor -> shards of a transaction that discovered a child object: the
// augmented transaction replaces the original in the queues.
struct AugProposeMsg {
    Transaction tx;
    void encode(Writer& w) const { tx.encode(w); }
    static AugProposeMsg decode(Reader& r) { return {Transaction::decode(r)}; }
};

// Broadcast to the whole grid when a worker persists a checkpoint. boundary
// is the highest boundary the sender holds, so redelivery or loss of older
// notices never wedges the stability quorum.
struct CheckpointedMsg {
    uint32_t shard = 0;
    uint64_t boundary = 0;
    uint64_t stable_hint = 0;

    void encode(Writer& w) const {
        w.u32(shard);
        w.u64(boundary);
        w.u64(stable_hint);
    }
    static CheckpointedMsg decode(Reader& r) {
        CheckpointedMsg m;
        m.shard = r.u32();
        m.boundary = r.u64();
        m.stable_hint = r.u64();
        return m;
    }
};

struct RecoverMsg {
    void encode(Writer&) const {}
    static RecoverMsg decode(Reader&) { return {}; }
};

struct RecoverOkMsg {
    uint64_t stable_txid = 0;
    void encode(Writer& w) const { w.u64(stable_txid); }
    static RecoverOkMsg decode(Reader& r) { return {r.u64()}; }
};

struct NewReaderMsg {
    uint64_t txidx = 0;
    void encode(Writer& w) const { w.u64(txidx); }
    static NewReaderMsg decode(Reader& r) { return {r.u64()}; }
};

struct NewReaderOkMsg {
    uint64_t txidx = 0;
    void encode(Writer& w) const { w.u64(txidx); }
    static NewReaderOkMsg decode(Reader& r) { return {r.u64()}; }
};

// Refusal of NewReader or Sync; carries the refuser's stable boundary so the
// caller can retry with fresher information.
struct RecoveryAbortMsg {
    uint64_t stable_txid = 0;
    void encode(Writer& w) const { w.u64(stable_txid); }
    static RecoveryAbortMsg decode(Reader& r) { return {r.u64()}; }
};

struct NotifySyncMsg {
    void encode(Writer&) const {}
    static NotifySyncMsg decode(Reader&) { return {}; }
};

struct SyncRequestMsg {
    uint64_t txidx = 0;
    void encode(Writer& w) const { w.u64(txidx); }
    static SyncRequestMsg decode(Reader& r) { return {r.u64()}; }
};

struct SyncCheckpointMsg {
    uint64_t txidx = 0;
    std::vector<uint8_t> blob;  // checkpoint file bytes, digest trailer included

    void encode(Writer& w) const {
        w.u64(txidx);
        w.blob(blob);
    }
    static SyncCheckpointMsg decode(Reader& r) {
        SyncCheckpointMsg m;
        m.txidx = r.u64();
        m.blob = r.blob();
        return m;
    }
};

struct SyncCompleteMsg {
    uint64_t txidx = 0;
    // Set on acknowledgements; a reply never triggers a reply, or two
    // settled row mates would volley confirmations forever.
    bool reply = false;
    void encode(Writer& w) const {
        w.u64(txidx);
        w.boolean(reply);
    }
    static SyncCompleteMsg decode(Reader& r) {
        SyncCompleteMsg m;
        m.txidx = r.u64();
        m.reply = r.boolean();
        return m;
    }
};

// Recovering worker -> sequencers (or rebooted sequencer -> primary):
// re-dispatch from this batch index onward, to the requester only.
struct ReplayRequestMsg {
    uint64_t from_batch_idx = 0;
    void encode(Writer& w) const { w.u64(from_batch_idx); }
    static ReplayRequestMsg decode(Reader& r) { return {r.u64()}; }
};

// Failure detector notice. up=false: subject suspected; up=true: cleared.
struct SuspectMsg {
    WorkerId subject;
    bool up = false;

    void encode(Writer& w) const {
        subject.encode(w);
        w.boolean(up);
    }
    static SuspectMsg decode(Reader& r) {
        SuspectMsg m;
        m.subject = WorkerId::decode(r);
        m.up = r.boolean();
        return m;
    }
};

// Self-addressed wakeup used by recovery retries.
struct TimerMsg {
    uint64_t token = 0;
    void encode(Writer& w) const { w.u64(token); }
    static TimerMsg decode(Reader& r) { return {r.u64()}; }
};

// Harness/coordinator control plane (multi-process runs): start/done/metrics.
struct ControlMsg {
    enum Op : uint8_t { start = 1, done = 2, metrics = 3, stop = 4 };
    uint8_t op = start;
    uint64_t value = 0;
    std::string text;

    void encode(Writer& w) const {
        w.u8(op);
        w.u64(value);
        w.blob({reinterpret_cast<const uint8_t*>(text.data()), text.size()});
    }
    static ControlMsg decode(Reader& r) {
        ControlMsg m;
        m.op = r.u8();
        m.value = r.u64();
        auto b = r.blob();
        m.text.assign(b.begin(), b.end());
        return m;
    }
};

using Message =
    std::variant<CommitEntryMsg, ProposeMsg, ReadyMsg, ResultMsg, AugProposeMsg, CheckpointedMsg,
                 RecoverMsg, RecoverOkMsg, NewReaderMsg, NewReaderOkMsg, RecoveryAbortMsg,
                 NotifySyncMsg, SyncRequestMsg, SyncCheckpointMsg, SyncCompleteMsg,
                 ReplayRequestMsg, SuspectMsg, TimerMsg, ControlMsg>;

MsgType type_of(const Message& m);
const char* type_name(MsgType t);

// Payload followed by the one-byte type tag (the socket layer adds the
// length prefix around this).
std::vector<uint8_t> encode_message(const Message& m);
Message decode_message(std::span<const uint8_t> data);

struct Envelope {
    WorkerId src;
    WorkerId dst;
    Message msg;
};

}  // namespace shardexec
