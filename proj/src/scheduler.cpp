#include "shardexec/scheduler.hpp"

#include <algorithm>
#include <sstream>

#include "shardexec/errors.hpp"

namespace shardexec {

// ---- PendingQueues ----

void PendingQueues::enqueue_write(const ObjectId& oid, uint64_t idx) {
    q_[oid].push_back(OpGroup{true, {idx}});
}

void PendingQueues::enqueue_read(const ObjectId& oid, uint64_t idx) {
    auto& dq = q_[oid];
    if (!dq.empty() && !dq.back().write) {
        dq.back().txs.push_back(idx);
        return;
    }
    dq.push_back(OpGroup{false, {idx}});
}

bool PendingQueues::at_head(const ObjectId& oid, uint64_t idx) const {
    auto it = q_.find(oid);
    if (it == q_.end() || it->second.empty()) return false;
    const auto& head = it->second.front().txs;
    return std::find(head.begin(), head.end(), idx) != head.end();
}

std::vector<uint64_t> PendingQueues::advance(const ObjectId& oid, uint64_t idx) {
    auto it = q_.find(oid);
    if (it == q_.end() || it->second.empty())
        throw ProtocolError(ProtocolError::Kind::not_at_head, "advance on empty queue");
    auto& head = it->second.front().txs;
    auto pos = std::find(head.begin(), head.end(), idx);
    if (pos == head.end())
        throw ProtocolError(ProtocolError::Kind::not_at_head,
                            "tx " + std::to_string(idx) + " not at queue head");
    head.erase(pos);
    std::vector<uint64_t> new_heads;
    if (head.empty()) {
        it->second.pop_front();
        if (it->second.empty()) {
            q_.erase(it);
        } else {
            new_heads = it->second.front().txs;
        }
    }
    return new_heads;
}

const std::deque<PendingQueues::OpGroup>* PendingQueues::queue(const ObjectId& oid) const {
    auto it = q_.find(oid);
    return it == q_.end() ? nullptr : &it->second;
}

std::string PendingQueues::dump(
    const std::function<std::string(const ObjectId&)>& name_of) const {
    std::map<std::string, const std::deque<OpGroup>*> ordered;
    for (const auto& [oid, dq] : q_) ordered[name_of(oid)] = &dq;
    std::ostringstream os;
    for (const auto& [name, dq] : ordered) {
        os << "Pending[" << name << "]:";
        for (const auto& g : *dq) {
            os << " (" << (g.write ? 'W' : 'R') << ", [";
            for (size_t i = 0; i < g.txs.size(); ++i) {
                if (i) os << ", ";
                os << "Tx" << g.txs[i];
            }
            os << "])";
        }
        os << "\n";
    }
    return os.str();
}

void PendingQueues::validate_acyclic() const {
    // Group order equals commit order on every queue, so an edge always
    // points from a higher tx index to a lower one and no cycle can form.
    for (const auto& [oid, dq] : q_) {
        uint64_t floor = 0;
        for (const auto& g : dq) {
            uint64_t lo = UINT64_MAX, hi = 0;
            for (uint64_t t : g.txs) {
                lo = std::min(lo, t);
                hi = std::max(hi, t);
            }
            if (g.txs.empty()) throw ProtocolError(ProtocolError::Kind::bad_state, "empty op group");
            if (lo <= floor)
                throw ProtocolError(ProtocolError::Kind::bad_state,
                                    "queue group order violates commit order");
            floor = hi;
        }
    }
}

// ---- SplitQueues ----

void SplitQueues::add_edge(uint64_t waiter, uint64_t on) {
    waiting_on_[waiter].insert(on);
    waited_on_by_[on].insert(waiter);
}

TxLabels SplitQueues::insert(const Transaction& tx, uint32_t shard, uint32_t n_shards) {
    TxLabels labels;
    tx.for_each_read([&](const ObjectId& oid) {
        if (shard_of(oid, n_shards) != shard) return;
        uint64_t in = next_label_[oid];
        labels.reads.push_back({oid, in});
        auto w = current_writer_.find(oid);
        if (w != current_writer_.end()) add_edge(tx.index, w->second);
    });
    tx.for_each_write([&](const ObjectId& oid) {
        if (shard_of(oid, n_shards) != shard) return;
        uint64_t in = next_label_[oid];
        uint64_t out = ++next_label_[oid];
        labels.writes.push_back({oid, in, out});
        auto w = current_writer_.find(oid);
        if (w != current_writer_.end()) add_edge(tx.index, w->second);
        current_writer_[oid] = tx.index;
    });
    return labels;
}

void SplitQueues::insert_one(TxLabels& labels, uint64_t idx, const ObjectId& oid, bool is_write) {
    uint64_t in = next_label_[oid];
    auto w = current_writer_.find(oid);
    if (w != current_writer_.end()) add_edge(idx, w->second);
    if (is_write) {
        uint64_t out = ++next_label_[oid];
        labels.writes.push_back({oid, in, out});
        current_writer_[oid] = idx;
    } else {
        labels.reads.push_back({oid, in});
    }
}

bool SplitQueues::blocked(uint64_t idx) const {
    auto it = waiting_on_.find(idx);
    return it != waiting_on_.end() && !it->second.empty();
}

std::vector<uint64_t> SplitQueues::advance(uint64_t idx, const TxLabels& labels) {
    for (const auto& w : labels.writes) {
        auto it = current_writer_.find(w.oid);
        if (it != current_writer_.end() && it->second == idx) current_writer_.erase(it);
    }
    std::vector<uint64_t> unblocked;
    auto it = waited_on_by_.find(idx);
    if (it != waited_on_by_.end()) {
        for (uint64_t waiter : it->second) {
            auto& deps = waiting_on_[waiter];
            deps.erase(idx);
            if (deps.empty()) {
                waiting_on_.erase(waiter);
                unblocked.push_back(waiter);
            }
        }
        waited_on_by_.erase(it);
    }
    waiting_on_.erase(idx);
    return unblocked;
}

std::vector<std::pair<uint64_t, uint64_t>> SplitQueues::waiting_edges() const {
    std::vector<std::pair<uint64_t, uint64_t>> out;
    for (const auto& [waiter, deps] : waiting_on_)
        for (uint64_t on : deps) out.emplace_back(waiter, on);
    return out;
}

void SplitQueues::validate_acyclic() const {
    for (const auto& [waiter, deps] : waiting_on_)
        for (uint64_t on : deps)
            if (on >= waiter)
                throw ProtocolError(ProtocolError::Kind::bad_state,
                                    "waiting edge against commit order");
}

// ---- ProposeBuffer ----

bool ProposeBuffer::add(const ProposeMsg& msg) {
    if (msg.sequencer >= n_sequencers_)
        throw ProtocolError(ProtocolError::Kind::bad_state, "sequencer id out of range");
    if (msg.batch_idx < next_) return false;  // already released, trust earlier copy
    auto enc = encode_message(Message{msg});
    auto& slot = pending_[msg.batch_idx];
    auto it = slot.find(msg.sequencer);
    if (it != slot.end()) {
        if (it->second == enc) return false;
        throw ProtocolError(ProtocolError::Kind::duplicate_propose,
                            "conflicting propose for batch " + std::to_string(msg.batch_idx) +
                                " from sequencer " + std::to_string(msg.sequencer));
    }
    slot.emplace(msg.sequencer, std::move(enc));
    return true;
}

bool ProposeBuffer::complete_next() const {
    auto it = pending_.find(next_);
    return it != pending_.end() && it->second.size() == n_sequencers_;
}

std::vector<ProposeMsg> ProposeBuffer::pop_next() {
    auto it = pending_.find(next_);
    if (it == pending_.end() || it->second.size() != n_sequencers_)
        throw ProtocolError(ProtocolError::Kind::bad_state, "pop on incomplete batch");
    std::vector<ProposeMsg> out;
    for (auto& [seq, enc] : it->second)
        out.push_back(std::get<ProposeMsg>(decode_message(enc)));
    pending_.erase(it);
    ++next_;
    return out;
}

// ---- MissingIndex ----

void MissingIndex::park(const Key& key, uint64_t idx) {
    by_key_[key].insert(idx);
    by_tx_[idx].insert(key);
}

std::vector<uint64_t> MissingIndex::on_available(const Key& key) {
    auto it = by_key_.find(key);
    if (it == by_key_.end()) return {};
    std::vector<uint64_t> out(it->second.begin(), it->second.end());
    for (uint64_t idx : out) {
        auto& keys = by_tx_[idx];
        keys.erase(key);
        if (keys.empty()) by_tx_.erase(idx);
    }
    by_key_.erase(it);
    return out;
}

std::vector<uint64_t> MissingIndex::on_watermark(uint64_t j) {
    std::vector<uint64_t> out;
    while (!by_tx_.empty() && by_tx_.begin()->first <= j + 1) {
        uint64_t idx = by_tx_.begin()->first;
        out.push_back(idx);
        forget(idx);
    }
    return out;
}

void MissingIndex::forget(uint64_t idx) {
    auto it = by_tx_.find(idx);
    if (it == by_tx_.end()) return;
    for (const Key& key : it->second) {
        auto kit = by_key_.find(key);
        if (kit == by_key_.end()) continue;
        kit->second.erase(idx);
        if (kit->second.empty()) by_key_.erase(kit);
    }
    by_tx_.erase(it);
}

// ---- Scheduler ----

Scheduler::Scheduler(Mode mode, uint32_t shard, uint32_t n_shards, uint32_t n_sequencers,
                     uint64_t first_batch)
    : mode_(mode), shard_(shard), n_shards_(n_shards), buffer_(n_sequencers, first_batch) {}

std::vector<std::pair<ObjectId, bool>> Scheduler::handled_refs(const Transaction& tx) const {
    std::vector<std::pair<ObjectId, bool>> refs;
    tx.for_each_read([&](const ObjectId& oid) {
        if (shard_of(oid, n_shards_) == shard_) refs.emplace_back(oid, false);
    });
    tx.for_each_write([&](const ObjectId& oid) {
        if (shard_of(oid, n_shards_) == shard_) refs.emplace_back(oid, true);
    });
    for (size_t a = 0; a < refs.size(); ++a)
        for (size_t b = a + 1; b < refs.size(); ++b)
            if (refs[a].first == refs[b].first)
                throw ProtocolError(ProtocolError::Kind::bad_state,
                                    "tx " + std::to_string(tx.index) + " references an object twice");
    return refs;
}

void Scheduler::register_tx(const Transaction& tx) {
    TxState st;
    st.tx = tx;
    if (mode_ == Mode::split) {
        st.labels = split_.insert(tx, shard_, n_shards_);
    } else {
        for (const auto& [oid, is_write] : handled_refs(tx)) {
            if (is_write)
                queues_.enqueue_write(oid, tx.index);
            else
                queues_.enqueue_read(oid, tx.index);
        }
    }
    states_.emplace(tx.index, std::move(st));
}

std::vector<uint64_t> Scheduler::process_propose(const ProposeMsg& msg, uint64_t j) {
    if (!buffer_.add(msg)) return {};
    std::vector<uint64_t> candidates;
    while (buffer_.complete_next()) {
        uint64_t batch_idx = buffer_.watermark();
        auto msgs = buffer_.pop_next();
        std::map<uint64_t, const Transaction*> merged;
        for (const auto& pm : msgs) {
            if (pm.tx_count > 0) {
                batch_ranges_[batch_idx] = {pm.first_index, pm.first_index + pm.tx_count - 1};
                released_max_ = std::max(released_max_, pm.first_index + pm.tx_count - 1);
            }
            for (const auto& tx : pm.txs) {
                auto [it, fresh] = merged.emplace(tx.index, &tx);
                if (!fresh && it->second->digest != tx.digest)
                    throw ProtocolError(ProtocolError::Kind::digest_mismatch,
                                        "diverging tx at index " + std::to_string(tx.index));
            }
        }
        for (const auto& [idx, tx] : merged) {
            if (idx <= j || states_.contains(idx)) continue;  // replay after restore
            register_tx(*tx);
            candidates.push_back(idx);
        }
    }
    return candidates;
}

TriggerResult Scheduler::try_trigger(uint64_t idx, const StoreView& store, uint64_t j) {
    auto it = states_.find(idx);
    if (it == states_.end()) return {};
    TxState& st = it->second;
    if (st.ready_sent || st.executed) return {};

    if (mode_ == Mode::split) {
        if (split_.blocked(idx)) return {};
    } else {
        for (const auto& [oid, is_write] : handled_refs(st.tx)) {
            (void)is_write;
            if (!queues_.at_head(oid, idx)) return {};
        }
    }

    // Gather slots. An object (or version) that cannot exist any more is a
    // hole slot; one that may still arrive parks the transaction. A hole is
    // provable only once every earlier transaction has executed (j >= idx-1)
    // or, in split mode, once the store marks the version gone.
    std::vector<ObjSlot> slots;
    std::vector<MissingIndex::Key> parked;
    auto gather = [&](const ObjectId& oid, uint64_t label) {
        const Object* got = nullptr;
        switch (store.version_state(oid, label, &got)) {
            case StoreView::Ver::present:
                slots.push_back(ObjSlot{oid, *got});
                break;
            case StoreView::Ver::gone:
                slots.push_back(ObjSlot{oid, std::nullopt});
                break;
            case StoreView::Ver::not_yet:
                if (j >= idx - 1)
                    slots.push_back(ObjSlot{oid, std::nullopt});
                else
                    parked.emplace_back(oid, label);
                break;
        }
    };
    if (mode_ == Mode::split) {
        for (const auto& r : st.labels.reads) gather(r.oid, r.in);
        for (const auto& w : st.labels.writes) gather(w.oid, w.in);
    } else {
        for (const auto& [oid, is_write] : handled_refs(st.tx)) {
            (void)is_write;
            const Object* o = store.live(oid);
            if (o)
                slots.push_back(ObjSlot{oid, *o});
            else if (j >= idx - 1)
                slots.push_back(ObjSlot{oid, std::nullopt});
            else
                parked.emplace_back(oid, 0);
        }
    }
    if (!parked.empty()) {
        for (const auto& key : parked) missing_.park(key, idx);
        return {};
    }

    std::sort(slots.begin(), slots.end(),
              [](const ObjSlot& a, const ObjSlot& b) { return a.oid < b.oid; });
    st.ready_sent = true;
    TriggerResult res;
    res.sent = true;
    res.slots = std::move(slots);
    if (mode_ == Mode::base) {
        // Reads only gate until the snapshot is taken; release them now so
        // the next writer can run while this transaction is in flight.
        for (const auto& [oid, is_write] : handled_refs(st.tx)) {
            if (is_write) continue;
            auto heads = queues_.advance(oid, idx);
            res.follow_up.insert(res.follow_up.end(), heads.begin(), heads.end());
        }
    }
    return res;
}

bool Scheduler::executed(uint64_t idx) const {
    auto it = states_.find(idx);
    return it != states_.end() && it->second.executed;
}

bool Scheduler::ready_sent(uint64_t idx) const {
    auto it = states_.find(idx);
    return it != states_.end() && it->second.ready_sent;
}

bool Scheduler::advanceable(uint64_t idx) const {
    auto it = states_.find(idx);
    if (it == states_.end()) return false;
    const TxState& st = it->second;
    if (st.executed) return false;
    if (mode_ == Mode::split) return !split_.blocked(idx);
    for (const auto& [oid, is_write] : handled_refs(st.tx)) {
        if (mode_ == Mode::base && !is_write && st.ready_sent) continue;  // released at send
        if (!queues_.at_head(oid, idx)) return false;
    }
    return true;
}

std::vector<uint64_t> Scheduler::on_result(uint64_t idx) {
    auto it = states_.find(idx);
    if (it == states_.end())
        throw ProtocolError(ProtocolError::Kind::bad_state,
                            "result for unscheduled tx " + std::to_string(idx));
    TxState& st = it->second;
    if (st.executed) return {};
    std::vector<uint64_t> candidates;
    if (mode_ == Mode::split) {
        candidates = split_.advance(idx, st.labels);
    } else {
        for (const auto& [oid, is_write] : handled_refs(st.tx)) {
            if (mode_ == Mode::base && !is_write && st.ready_sent) continue;
            auto heads = queues_.advance(oid, idx);
            candidates.insert(candidates.end(), heads.begin(), heads.end());
        }
    }
    st.executed = true;
    missing_.forget(idx);
    return candidates;
}

std::vector<uint64_t> Scheduler::on_materialized(const ObjectId& oid, uint64_t label) {
    return missing_.on_available({oid, label});
}

std::vector<uint64_t> Scheduler::on_watermark(uint64_t j) { return missing_.on_watermark(j); }

std::vector<uint64_t> Scheduler::apply_augmentation(const Transaction& aug) {
    auto it = states_.find(aug.index);
    if (it == states_.end()) {
        // A shard that handles only the discovered object never sees this tx
        // in its propose stream; the augmentation is the registration.
        register_tx(aug);
        return {aug.index};
    }
    TxState& st = it->second;
    if (st.executed) return {};
    if (aug.digest != st.tx.digest)
        throw ProtocolError(ProtocolError::Kind::digest_mismatch, "augmentation digest mismatch");
    if (aug.aug_rounds() <= st.tx.aug_rounds()) return {};  // stale redelivery

    // Enqueue only refs that are new relative to the registered version.
    auto seen = [&](const ObjectId& oid) {
        bool found = false;
        st.tx.for_each_ref([&](const ObjectId& o) {
            if (o == oid) found = true;
        });
        return found;
    };
    std::vector<std::pair<ObjectId, bool>> fresh;
    for (const auto& oid : aug.added_reads)
        if (shard_of(oid, n_shards_) == shard_ && !seen(oid)) fresh.emplace_back(oid, false);
    for (const auto& oid : aug.added_writes)
        if (shard_of(oid, n_shards_) == shard_ && !seen(oid)) fresh.emplace_back(oid, true);
    for (const auto& [oid, is_write] : fresh) {
        if (mode_ == Mode::split) {
            split_.insert_one(st.labels, aug.index, oid, is_write);
        } else if (is_write) {
            queues_.enqueue_write(oid, aug.index);
        } else {
            queues_.enqueue_read(oid, aug.index);
        }
    }
    st.tx = aug;
    st.ready_sent = false;  // full slot set goes out again
    missing_.forget(aug.index);
    return {aug.index};
}

const Transaction* Scheduler::tx(uint64_t idx) const {
    auto it = states_.find(idx);
    return it == states_.end() ? nullptr : &it->second.tx;
}

const TxLabels* Scheduler::labels(uint64_t idx) const {
    auto it = states_.find(idx);
    return it == states_.end() ? nullptr : &it->second.labels;
}

void Scheduler::purge_below(uint64_t j, uint64_t range_floor) {
    while (!states_.empty() && states_.begin()->first <= j) {
        if (!states_.begin()->second.executed)
            throw ProtocolError(ProtocolError::Kind::bad_state,
                                "purge of unexecuted tx " + std::to_string(states_.begin()->first));
        states_.erase(states_.begin());
    }
    uint64_t cut = std::min(j, range_floor);
    while (!batch_ranges_.empty() && batch_ranges_.begin()->second.second <= cut &&
           batch_ranges_.begin()->first + 1 < buffer_.watermark())
        batch_ranges_.erase(batch_ranges_.begin());
}

uint64_t Scheduler::resume_batch_for(uint64_t boundary) const {
    for (const auto& [batch_idx, range] : batch_ranges_)
        if (range.first <= boundary + 1 && boundary + 1 <= range.second) return batch_idx;
    return buffer_.watermark();
}

std::string Scheduler::dump_queues(
    const std::function<std::string(const ObjectId&)>& name_of) const {
    return queues_.dump(name_of);
}

void Scheduler::validate_acyclic() const {
    if (mode_ == Mode::split)
        split_.validate_acyclic();
    else
        queues_.validate_acyclic();
}

}  // namespace shardexec
