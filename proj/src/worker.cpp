#include "shardexec/worker.hpp"

#include <algorithm>
#include <cassert>

#include "shardexec/errors.hpp"
#include "shardexec/vm.hpp"

namespace shardexec {

namespace {

size_t distinct_refs(const Transaction& tx) {
    std::set<ObjectId> ids;
    tx.for_each_ref([&](const ObjectId& id) { ids.insert(id); });
    return ids.size();
}

std::vector<Object> shard_slice(const std::vector<Object>& all, uint32_t shard,
                                uint32_t n_shards) {
    std::vector<Object> out;
    for (const auto& o : all)
        if (shard_of(o.id, n_shards) == shard) out.push_back(o);
    return out;
}

}  // namespace

ExecutionWorker::ExecutionWorker(WorkerId id, const EngineConfig& cfg, Net& net,
                                 std::filesystem::path dir, std::vector<Object> genesis)
    : id_(id),
      cfg_(cfg),
      net_(net),
      dir_(std::move(dir)),
      genesis_(std::move(genesis)),
      store_(cfg.mode == Mode::split, cfg.checkpoints_enabled),
      sched_(cfg.mode, id.index, cfg.n_shards, cfg.n_sequencers) {
    for (uint32_t s = 0; s < cfg_.n_shards; s++)
        if (s != id_.index) read_from_[s] = WorkerId::make_execution(id_.row, uint16_t(s));
    drained_limit_ = exec_limit();
}

void ExecutionWorker::boot_fresh() {
    store_.seed(shard_slice(genesis_, id_.index, cfg_.n_shards));
}

void ExecutionWorker::reboot() {
    if (!dir_.empty()) cps_ = load_checkpoint_dir(dir_);
    if (!cps_.empty()) {
        restore_state(cps_.rbegin()->second);
        last_cp_ = cps_.rbegin()->first;
        // Oldest survivor of our last GC: a floor on what the grid agreed on.
        stable_ = cps_.begin()->first;
    } else {
        restore_genesis();
    }
    col_max_[id_.index][id_.row] = last_cp_;
    if (cfg_.checkpoints_enabled) broadcast_checkpointed();
    request_replay();
    for (uint32_t s = 0; s < cfg_.n_shards; s++)
        if (s != id_.index) start_chain(s);
    drained_limit_ = exec_limit();
}

uint64_t ExecutionWorker::exec_limit() const {
    if (!cfg_.checkpoints_enabled) return UINT64_MAX;
    return stable_ + uint64_t(cfg_.checkpoint_limit) * cfg_.checkpoint_every;
}

WorkerId ExecutionWorker::read_source(uint32_t shard) const {
    auto it = read_from_.find(shard);
    return it == read_from_.end() ? id_ : it->second;
}

size_t ExecutionWorker::outgoing_buffered() const {
    size_t n = 0;
    for (const auto& [col, buf] : buffer_out_) n += buf.size();
    return n;
}

// ---- dispatch ----

void ExecutionWorker::handle(const Envelope& env) {
    dispatch(env);
    for (;;) {
        if (!local_q_.empty()) {
            Envelope e = std::move(local_q_.front());
            local_q_.pop_front();
            dispatch(e);
            continue;
        }
        if (!deferred_.empty() && drained_limit_ != exec_limit()) {
            drained_limit_ = exec_limit();
            std::deque<Envelope> batch;
            batch.swap(deferred_);
            for (auto& e : batch) dispatch(e);
            continue;
        }
        break;
    }
}

void ExecutionWorker::dispatch(const Envelope& env) {
    const Message& m = env.msg;
    if (auto* p = std::get_if<ProposeMsg>(&m)) return on_propose(*p);
    if (auto* p = std::get_if<ReadyMsg>(&m)) return on_ready(env, *p);
    if (auto* p = std::get_if<ResultMsg>(&m)) return on_result(env, *p);
    if (auto* p = std::get_if<AugProposeMsg>(&m)) return on_aug(env, *p);
    if (auto* p = std::get_if<CheckpointedMsg>(&m)) return on_checkpointed(env.src, *p);
    if (std::get_if<RecoverMsg>(&m)) return on_recover(env.src);
    if (auto* p = std::get_if<RecoverOkMsg>(&m)) return on_recover_ok(env.src, *p);
    if (auto* p = std::get_if<NewReaderMsg>(&m)) return on_new_reader(env.src, *p);
    if (auto* p = std::get_if<NewReaderOkMsg>(&m)) return on_new_reader_ok(env.src, *p);
    if (auto* p = std::get_if<RecoveryAbortMsg>(&m)) return on_recovery_abort(env.src, *p);
    if (std::get_if<NotifySyncMsg>(&m)) return on_notify_sync(env.src);
    if (auto* p = std::get_if<SyncRequestMsg>(&m)) return on_sync_request(env.src, *p);
    if (auto* p = std::get_if<SyncCheckpointMsg>(&m)) return on_sync_checkpoint(*p);
    if (auto* p = std::get_if<SyncCompleteMsg>(&m)) return on_sync_complete(env.src, *p);
    if (auto* p = std::get_if<SuspectMsg>(&m)) return on_suspect(*p);
    if (std::get_if<TimerMsg>(&m)) return on_tick();
    throw ProtocolError(ProtocolError::Kind::bad_state,
                        std::string("unexpected message at execution worker: ") +
                            type_name(type_of(m)));
}

bool ExecutionWorker::gate_defer(const Envelope& env, uint64_t idx) {
    if (idx <= exec_limit()) return false;
    deferred_.push_back(env);
    counters_.deferred_total++;
    return true;
}

// ---- normal path ----

void ExecutionWorker::on_propose(const ProposeMsg& msg) {
    if (sync_) return;
    auto cands = sched_.process_propose(msg, j_);
    for (uint64_t idx : cands) {
        auto ait = pending_augs_.find(idx);
        if (ait != pending_augs_.end()) {
            sched_.apply_augmentation(ait->second);
            pending_augs_.erase(ait);
        }
        attempt_trigger(idx);
    }
    if (!cands.empty()) drain_pending();
}

void ExecutionWorker::attempt_trigger(uint64_t idx) {
    TriggerResult r = sched_.try_trigger(idx, store_, j_);
    if (r.sent) {
        const Transaction* tx = sched_.tx(idx);
        uint32_t exec = executor_of(*tx, cfg_.n_shards);
        send_to_column(exec, idx, ReadyMsg{*tx, std::move(r.slots)});
    }
    for (uint64_t f : r.follow_up) attempt_trigger(f);
}

void ExecutionWorker::on_ready(const Envelope& env, const ReadyMsg& msg) {
    if (sync_) return;
    uint64_t idx = msg.tx.index;
    if (idx <= j_ || done_above_.contains(idx)) return;
    if (gate_defer(env, idx)) return;
    ReadyEntry& rb = ready_buf_[idx];
    if (!rb.have_tx || msg.tx.aug_rounds() > rb.tx.aug_rounds()) {
        rb.tx = msg.tx;
        rb.have_tx = true;
    }
    for (const auto& s : msg.slots) rb.slots[s.oid] = s.obj;
    maybe_execute(idx);
}

void ExecutionWorker::maybe_execute(uint64_t idx) {
    auto it = ready_buf_.find(idx);
    if (it == ready_buf_.end() || !it->second.have_tx) return;
    ReadyEntry& rb = it->second;
    if (rb.slots.size() < distinct_refs(rb.tx)) return;

    bool hole = false;
    vm::InputMap inputs;
    for (const auto& [oid, obj] : rb.slots) {
        if (!obj) {
            hole = true;
            break;
        }
        inputs.emplace(oid, *obj);
    }
    if (hole) {
        Transaction tx = rb.tx;
        ready_buf_.erase(it);
        broadcast_result(tx, true, {}, {});
        return;
    }

    counters_.vm_runs++;
    vm::VmResult vr = vm::execute(rb.tx, inputs);
    if (vr.discovered) {
        // The access surfaced an object the declared sets missed. Announce the
        // augmented transaction to every shard holding one of its refs and
        // keep the entry; the owner's slot completes it.
        Transaction aug = rb.tx;
        aug.added_writes.push_back(vr.discovered->child);
        rb.tx = aug;
        std::set<uint32_t> cols;
        aug.for_each_ref([&](const ObjectId& oid) { cols.insert(shard_of(oid, cfg_.n_shards)); });
        for (uint32_t c : cols) send_to_column(c, idx, AugProposeMsg{aug});
        return;
    }
    Transaction tx = rb.tx;
    ready_buf_.erase(it);
    broadcast_result(tx, vr.aborted, std::move(vr.mutated), std::move(vr.deleted));
}

void ExecutionWorker::broadcast_result(const Transaction& tx, bool aborted,
                                       std::vector<Object> mutated,
                                       std::vector<ObjectId> deleted) {
    std::vector<ResultMsg> parts(cfg_.n_shards);
    for (auto& p : parts) {
        p.tx_digest = tx.digest;
        p.tx_index = tx.index;
        p.aborted = aborted;
    }
    for (auto& o : mutated) {
        uint32_t s = shard_of(o.id, cfg_.n_shards);
        parts[s].mutated.push_back(std::move(o));
    }
    for (const auto& d : deleted) parts[shard_of(d, cfg_.n_shards)].deleted.push_back(d);
    // Every column hears about every index; shards without effects use the
    // empty message to advance their watermark.
    for (uint32_t c = 0; c < cfg_.n_shards; c++) send_to_column(c, tx.index, std::move(parts[c]));
}

void ExecutionWorker::on_result(const Envelope& env, const ResultMsg& msg) {
    if (sync_) return;
    uint64_t idx = msg.tx_index;
    if (idx <= j_ || done_above_.contains(idx)) return;
    if (gate_defer(env, idx)) return;
    if (try_apply(msg))
        drain_pending();
    else
        pending_results_[idx] = msg;
}

bool ExecutionWorker::try_apply(const ResultMsg& msg) {
    uint64_t idx = msg.tx_index;
    if (!sched_.known(idx)) {
        // Unregistered and below the released propose range: the index
        // provably has no refs here, so the result is a pure heartbeat.
        if (sched_.released_through() < idx) return false;
        apply_result(msg, false);
        return true;
    }
    if (!sched_.advanceable(idx)) return false;
    apply_result(msg, true);
    return true;
}

void ExecutionWorker::apply_result(const ResultMsg& msg, bool local) {
    uint64_t idx = msg.tx_index;
    std::vector<uint64_t> wake;
    if (local) {
        if (cfg_.mode == Mode::split) {
            const TxLabels* lb = sched_.labels(idx);
            for (const auto& w : lb->writes) {
                std::optional<Object> val;
                bool settled = false;
                for (const auto& o : msg.mutated)
                    if (o.id == w.oid) {
                        val = o;
                        settled = true;
                        break;
                    }
                if (!settled &&
                    std::find(msg.deleted.begin(), msg.deleted.end(), w.oid) != msg.deleted.end())
                    settled = true;  // tombstone
                if (!settled) {
                    // Abort or untouched write: the input version forwards.
                    const Object* got = nullptr;
                    if (store_.version_state(w.oid, w.in, &got) == StoreView::Ver::present)
                        val = *got;
                }
                store_.materialize(w.oid, w.out, val);
                auto woken = sched_.on_materialized(w.oid, w.out);
                wake.insert(wake.end(), woken.begin(), woken.end());
            }
        } else {
            auto created = store_.apply_effects(msg.mutated, msg.deleted);
            for (const auto& oid : created) {
                auto woken = sched_.on_materialized(oid, 0);
                wake.insert(wake.end(), woken.begin(), woken.end());
            }
        }
        auto unblocked = sched_.on_result(idx);
        wake.insert(wake.end(), unblocked.begin(), unblocked.end());
    } else if (!msg.mutated.empty() || !msg.deleted.empty()) {
        throw ProtocolError(ProtocolError::Kind::bad_state,
                            "effects for a transaction this shard never scheduled");
    }
    store_.log_effects(idx, msg.mutated, msg.deleted);
    abort_flags_[idx] = msg.aborted;
    counters_.applied++;
    if (msg.aborted) counters_.aborted++;
    ready_buf_.erase(idx);  // a raced remote execution supersedes a pending local one
    done_above_.insert(idx);
    advance_watermark();
    std::sort(wake.begin(), wake.end());
    wake.erase(std::unique(wake.begin(), wake.end()), wake.end());
    for (uint64_t w : wake) {
        if (pending_results_.contains(w)) continue;  // its result beat the trigger
        attempt_trigger(w);
    }
}

void ExecutionWorker::advance_watermark() {
    uint64_t old = j_;
    while (done_above_.contains(j_ + 1)) {
        done_above_.erase(j_ + 1);
        j_++;
    }
    if (j_ == old) return;
    while (!ready_buf_.empty() && ready_buf_.begin()->first <= j_)
        ready_buf_.erase(ready_buf_.begin());
    while (!pending_augs_.empty() && pending_augs_.begin()->first <= j_)
        pending_augs_.erase(pending_augs_.begin());
    auto woken = sched_.on_watermark(j_);
    sched_.purge_below(j_, cfg_.checkpoints_enabled ? last_cp_ : j_);
    for (uint64_t w : woken)
        if (!pending_results_.contains(w)) attempt_trigger(w);
    maybe_roll_and_advance();
}

void ExecutionWorker::drain_pending() {
    if (draining_) return;
    draining_ = true;
    bool progress = true;
    while (progress) {
        progress = false;
        for (auto it = pending_results_.begin(); it != pending_results_.end();) {
            uint64_t idx = it->first;
            if (idx <= j_ || done_above_.contains(idx)) {
                it = pending_results_.erase(it);
                continue;
            }
            if (try_apply(it->second)) {
                progress = true;
                it = pending_results_.erase(it);
            } else {
                ++it;
            }
        }
    }
    draining_ = false;
}

void ExecutionWorker::on_aug(const Envelope& env, const AugProposeMsg& msg) {
    if (sync_) return;
    uint64_t idx = msg.tx.index;
    if (idx <= j_ || done_above_.contains(idx)) return;
    if (gate_defer(env, idx)) return;

    auto rit = ready_buf_.find(idx);
    if (rit != ready_buf_.end() && rit->second.have_tx &&
        msg.tx.aug_rounds() > rit->second.tx.aug_rounds())
        rit->second.tx = msg.tx;

    bool declared_local = false;
    for (const auto& oid : msg.tx.read_set)
        declared_local = declared_local || shard_of(oid, cfg_.n_shards) == id_.index;
    for (const auto& oid : msg.tx.write_set)
        declared_local = declared_local || shard_of(oid, cfg_.n_shards) == id_.index;

    if (!sched_.known(idx) && declared_local) {
        // The propose carrying idx has not arrived yet; it will register the
        // declared refs, then the buffered augmentation lands on top.
        auto [it, fresh] = pending_augs_.emplace(idx, msg.tx);
        if (!fresh && msg.tx.aug_rounds() > it->second.aug_rounds()) it->second = msg.tx;
    } else {
        for (uint64_t w : sched_.apply_augmentation(msg.tx))
            if (!pending_results_.contains(w)) attempt_trigger(w);
    }
    maybe_execute(idx);
    drain_pending();
}

// ---- checkpoints ----

void ExecutionWorker::on_checkpointed(const WorkerId& src, const CheckpointedMsg& msg) {
    uint64_t& cell = col_max_[msg.shard][src.row];
    cell = std::max(cell, msg.boundary);
    uint64_t cand = std::max(compute_stable(), msg.stable_hint);
    if (cand > stable_) {
        stable_ = cand;
        gc_below_stable();
    } else if (msg.stable_hint < stable_) {
        // The sender fell behind the quorum (typically after a restart); its
        // gate stays shut until someone tells it the current stable point.
        send(src, CheckpointedMsg{id_.index, last_cp_, stable_});
    }
    maybe_roll_and_advance();
}

void ExecutionWorker::maybe_roll_and_advance() {
    if (!cfg_.checkpoints_enabled) return;
    for (;;) {
        bool moved = false;
        uint64_t next_b = last_cp_ + cfg_.checkpoint_every;
        if (j_ >= next_b) {
            auto held = size_t(std::distance(cps_.lower_bound(stable_), cps_.end()));
            if (held + 1 <= cfg_.checkpoint_limit) {
                take_checkpoint(next_b);
                moved = true;
            }
        }
        uint64_t ns = compute_stable();
        if (ns > stable_) {
            stable_ = ns;
            gc_below_stable();
            moved = true;
        }
        if (!moved) break;
    }
}

void ExecutionWorker::take_checkpoint(uint64_t boundary) {
    store_.flush_to(boundary);
    Checkpoint cp;
    cp.shard = id_.index;
    cp.boundary = boundary;
    cp.resume_batch = sched_.resume_batch_for(boundary);
    cp.image = store_.image();
    if (!dir_.empty()) cp.write_file(checkpoint_path(dir_, boundary));
    cps_.emplace(boundary, std::move(cp));
    last_cp_ = boundary;
    col_max_[id_.index][id_.row] = boundary;
    counters_.checkpoints_written++;
    gc_below_stable();  // a straggler below stable dies once a fresh boundary lands
    broadcast_checkpointed();
}

uint64_t ExecutionWorker::compute_stable() const {
    uint64_t grid = UINT64_MAX;
    for (uint32_t s = 0; s < cfg_.n_shards; s++) {
        std::vector<uint64_t> vals;
        auto cit = col_max_.find(s);
        if (cit != col_max_.end())
            for (const auto& [row, b] : cit->second) vals.push_back(b);
        if (vals.size() < cfg_.quorum()) return 0;
        std::sort(vals.rbegin(), vals.rend());
        grid = std::min(grid, vals[cfg_.quorum() - 1]);
    }
    return grid == UINT64_MAX ? 0 : grid;
}

void ExecutionWorker::gc_below_stable() {
    // The newest checkpoint survives even below stable: it is the reboot floor.
    while (cps_.size() > 1 && cps_.begin()->first < stable_) {
        if (!dir_.empty()) {
            std::error_code ec;
            std::filesystem::remove(checkpoint_path(dir_, cps_.begin()->first), ec);
        }
        cps_.erase(cps_.begin());
    }
    for (auto& [col, buf] : buffer_out_) buf.erase(buf.begin(), buf.upper_bound(stable_));
}

void ExecutionWorker::broadcast_checkpointed() {
    CheckpointedMsg m{id_.index, last_cp_, stable_};
    for (uint16_t r = 0; r < cfg_.n_clusters; r++)
        for (uint16_t s = 0; s < cfg_.n_shards; s++) {
            WorkerId w = WorkerId::make_execution(r, s);
            if (w != id_) send(w, m);
        }
}

// ---- recovery ----

void ExecutionWorker::on_suspect(const SuspectMsg& msg) {
    if (msg.up) {
        suspected_.erase(msg.subject);
        return;
    }
    suspected_.insert(msg.subject);
    if (msg.subject.kind != WorkerId::execution) return;
    if (sync_) {
        if (sync_->phase == Sync::fetch && sync_->donor == msg.subject)
            retry_sync("donor crashed");
        else
            check_sync_done();
        return;
    }
    for (const auto& [s, src] : read_from_)
        if (src == msg.subject) start_chain(s);
    for (auto& [s, ch] : chains_)
        if (ch.phase == Chain::adopt && ch.donor == msg.subject) {
            ch = Chain{};
            for (const WorkerId& w : column(s)) send(w, RecoverMsg{});
        }
}

void ExecutionWorker::on_recover(const WorkerId& src) {
    // Advertise the newest boundary actually held; our stable can run ahead
    // of our own checkpoints, and those we could not serve.
    send(src, RecoverOkMsg{newest_held()});
}

void ExecutionWorker::on_recover_ok(const WorkerId& src, const RecoverOkMsg& msg) {
    if (sync_ && src.index == id_.index) {
        if (sync_->phase != Sync::get_status) return;
        sync_->replies[src] = msg.stable_txid;
        sync_quorum();
        return;
    }
    auto it = chains_.find(src.index);
    if (it == chains_.end() || it->second.phase != Chain::status) return;
    it->second.replies[src] = msg.stable_txid;
    chain_quorum(src.index);
}

void ExecutionWorker::start_chain(uint32_t shard) {
    if (sync_ || chains_.contains(shard)) return;
    chains_.emplace(shard, Chain{});
    for (const WorkerId& w : column(shard)) send(w, RecoverMsg{});
    arm_tick();
}

void ExecutionWorker::chain_quorum(uint32_t shard) {
    Chain& ch = chains_.at(shard);
    if (ch.replies.size() < cfg_.quorum()) return;
    WorkerId donor{};
    uint64_t best = 0;
    bool first = true;
    // map order: ties go to the smallest id
    for (const auto& [w, b] : ch.replies)
        if (first || b > best) {
            donor = w;
            best = b;
            first = false;
        }
    if (best > j_) {
        // The column's agreed state is ahead of us; partial catch-up through
        // one reader link cannot close that gap.
        start_sync();
        return;
    }
    ch.phase = Chain::adopt;
    ch.donor = donor;
    ch.txstar = best;
    send(donor, NewReaderMsg{j_});
}

void ExecutionWorker::on_new_reader(const WorkerId& src, const NewReaderMsg& msg) {
    if (sync_ || msg.txidx < stable_) {
        send(src, RecoveryAbortMsg{stable_});
        return;
    }
    read_to_.insert(src);
    send(src, NewReaderOkMsg{msg.txidx});
    counters_.replays_served++;
    auto bit = buffer_out_.find(src.index);
    if (bit == buffer_out_.end()) return;
    for (auto i = bit->second.upper_bound(msg.txidx); i != bit->second.end(); ++i)
        send(src, i->second);
}

void ExecutionWorker::on_new_reader_ok(const WorkerId& src, const NewReaderOkMsg& msg) {
    (void)msg;
    auto it = chains_.find(src.index);
    if (it == chains_.end() || it->second.phase != Chain::adopt || it->second.donor != src) return;
    read_from_[src.index] = src;
    chains_.erase(it);
}

void ExecutionWorker::on_recovery_abort(const WorkerId& src, const RecoveryAbortMsg& msg) {
    (void)msg;
    if (sync_) {
        if (sync_->phase == Sync::fetch && src == sync_->donor)
            retry_sync("donor purged the boundary");
        return;
    }
    auto it = chains_.find(src.index);
    if (it == chains_.end() || it->second.phase != Chain::adopt || it->second.donor != src) return;
    it->second = Chain{};
    for (const WorkerId& w : column(src.index)) send(w, RecoverMsg{});
}

void ExecutionWorker::on_notify_sync(const WorkerId& src) {
    read_to_.erase(src);
    if (src.kind == WorkerId::execution && src.row == id_.row && src != id_) {
        // A row mate is resetting; the row must converge on one state.
        start_sync();
        return;
    }
    for (const auto& [s, w] : read_from_)
        if (w == src) {
            start_chain(s);
            break;
        }
}

void ExecutionWorker::start_sync() {
    if (sync_) return;
    counters_.syncs++;
    std::set<WorkerId> notify;
    for (const auto& [s, w] : read_from_) notify.insert(w);
    for (const auto& w : read_to_) notify.insert(w);
    for (const auto& w : row_mates()) notify.insert(w);
    notify.erase(id_);
    for (const auto& w : notify) send(w, NotifySyncMsg{});
    read_to_.clear();
    chains_.clear();
    completes_.clear();
    sync_ = Sync{};
    sync_->replies[id_] = newest_held();
    for (const WorkerId& w : column(id_.index)) send(w, RecoverMsg{});
    arm_tick();
    sync_quorum();  // f_e + 1 may already be satisfied by our own reply
}

void ExecutionWorker::sync_quorum() {
    Sync& sy = *sync_;
    if (sy.phase != Sync::get_status || sy.replies.size() < cfg_.quorum()) return;
    WorkerId donor{};
    uint64_t best = 0;
    bool first = true;
    for (const auto& [w, b] : sy.replies)
        if (first || b > best) {
            donor = w;
            best = b;
            first = false;
        }
    sy.phase = Sync::fetch;
    sy.donor = donor;
    sy.txstar = best;
    if (best == 0) {
        restore_genesis();
        enter_confirm();
    } else if (donor == id_) {
        Checkpoint cp = cps_.at(best);
        restore_state(cp);
        enter_confirm();
    } else {
        send(donor, SyncRequestMsg{best});
    }
}

void ExecutionWorker::retry_sync(const char* why) {
    Sync& sy = *sync_;
    if (++sy.retries > cfg_.sync_retry_cap)
        throw ProtocolError(ProtocolError::Kind::scenario_timeout,
                            id_.str() + " sync retries exhausted: " + why);
    sy.phase = Sync::get_status;
    sy.replies.clear();
    sy.replies[id_] = newest_held();
    sy.donor = WorkerId{};
    sy.txstar = 0;
    for (const WorkerId& w : column(id_.index)) send(w, RecoverMsg{});
    arm_tick();
    sync_quorum();
}

void ExecutionWorker::on_sync_request(const WorkerId& src, const SyncRequestMsg& msg) {
    auto it = cps_.find(msg.txidx);
    if (it == cps_.end()) {
        send(src, RecoveryAbortMsg{stable_});
        return;
    }
    send(src, SyncCheckpointMsg{msg.txidx, it->second.encode()});
}

void ExecutionWorker::on_sync_checkpoint(const SyncCheckpointMsg& msg) {
    if (!sync_ || sync_->phase != Sync::fetch || msg.txidx != sync_->txstar) return;
    Checkpoint cp = Checkpoint::decode(msg.blob);  // digest-verified
    restore_state(cp);
    // Adopt the fetched boundary; it is at least as new as anything held.
    uint64_t b = cp.boundary;
    if (!dir_.empty()) cp.write_file(checkpoint_path(dir_, b));
    last_cp_ = b;
    col_max_[id_.index][id_.row] = b;
    cps_[b] = std::move(cp);
    while (cps_.size() > cfg_.checkpoint_limit) {
        if (!dir_.empty()) {
            std::error_code ec;
            std::filesystem::remove(checkpoint_path(dir_, cps_.begin()->first), ec);
        }
        cps_.erase(cps_.begin());
    }
    enter_confirm();
}

void ExecutionWorker::enter_confirm() {
    Sync& sy = *sync_;
    sy.phase = Sync::confirm;
    for (const WorkerId& w : row_mates()) send(w, SyncCompleteMsg{sy.txstar});
    check_sync_done();
}

void ExecutionWorker::on_sync_complete(const WorkerId& src, const SyncCompleteMsg& msg) {
    completes_[src] = msg.txidx;
    if (!sync_) {
        if (msg.txidx > j_) {
            // A row mate restored past us; join the reset.
            start_sync();
            return;
        }
        // Already at or past the boundary: confirm so the peer can finish.
        if (!msg.reply) send(src, SyncCompleteMsg{msg.txidx, true});
        return;
    }
    if (sync_->phase != Sync::confirm) return;
    if (msg.txidx > sync_->txstar) {
        retry_sync("row settled on a newer boundary");
        return;
    }
    check_sync_done();
}

void ExecutionWorker::check_sync_done() {
    if (!sync_ || sync_->phase != Sync::confirm) return;
    for (const WorkerId& p : row_mates()) {
        if (suspected_.contains(p)) continue;
        auto it = completes_.find(p);
        if (it == completes_.end() || it->second != sync_->txstar) return;
    }
    finish_sync();
}

void ExecutionWorker::finish_sync() {
    sync_.reset();
    // Reader links come from the chain handshake, which also replays the
    // buffered tail between the restored boundary and live traffic. A silent
    // row-mate default would skip that replay and strand the watermark.
    for (uint32_t s = 0; s < cfg_.n_shards; s++)
        if (s != id_.index) start_chain(s);
    request_replay();
}

void ExecutionWorker::restore_state(const Checkpoint& cp) {
    store_ = ObjectStore(cfg_.mode == Mode::split, cfg_.checkpoints_enabled);
    store_.reset_from_image(cp.image, cp.boundary);
    sched_ = Scheduler(cfg_.mode, id_.index, cfg_.n_shards, cfg_.n_sequencers, cp.resume_batch);
    j_ = cp.boundary;
    resume_batch_ = cp.resume_batch;
    done_above_.clear();
    ready_buf_.clear();
    pending_results_.clear();
    pending_augs_.clear();
    deferred_.clear();
    drained_limit_ = exec_limit();
}

void ExecutionWorker::restore_genesis() {
    store_ = ObjectStore(cfg_.mode == Mode::split, cfg_.checkpoints_enabled);
    store_.seed(shard_slice(genesis_, id_.index, cfg_.n_shards));
    sched_ = Scheduler(cfg_.mode, id_.index, cfg_.n_shards, cfg_.n_sequencers);
    j_ = 0;
    resume_batch_ = 0;
    done_above_.clear();
    ready_buf_.clear();
    pending_results_.clear();
    pending_augs_.clear();
    deferred_.clear();
    drained_limit_ = exec_limit();
}

void ExecutionWorker::request_replay() {
    for (uint32_t q = 0; q < cfg_.n_sequencers; q++)
        send(WorkerId::make_sequencer(uint16_t(q)), ReplayRequestMsg{resume_batch_});
}

void ExecutionWorker::on_tick() {
    tick_armed_ = false;
    if (sync_) {
        Sync& sy = *sync_;
        switch (sy.phase) {
            case Sync::get_status:
                for (const WorkerId& w : column(id_.index))
                    if (!sy.replies.contains(w)) send(w, RecoverMsg{});
                break;
            case Sync::fetch:
                send(sy.donor, SyncRequestMsg{sy.txstar});
                break;
            case Sync::confirm:
                for (const WorkerId& p : row_mates()) {
                    if (suspected_.contains(p)) continue;
                    auto it = completes_.find(p);
                    if (it == completes_.end() || it->second != sy.txstar)
                        send(p, SyncCompleteMsg{sy.txstar});
                }
                break;
        }
    }
    for (auto& [s, ch] : chains_) {
        if (ch.phase == Chain::status) {
            for (const WorkerId& w : column(s))
                if (!ch.replies.contains(w)) send(w, RecoverMsg{});
        } else {
            send(ch.donor, NewReaderMsg{j_});
        }
    }
    if (sync_ || !chains_.empty()) arm_tick();
}

// ---- wiring ----

void ExecutionWorker::send(const WorkerId& dst, Message msg) {
    if (dst == id_) {
        send_local(std::move(msg));
        return;
    }
    net_.send(id_, dst, std::move(msg));
}

void ExecutionWorker::send_local(Message msg) {
    local_q_.push_back(Envelope{id_, id_, std::move(msg)});
}

void ExecutionWorker::send_to_column(uint32_t col, uint64_t txid, Message msg) {
    if (cfg_.checkpoints_enabled && txid > stable_) {
        auto& buf = buffer_out_[col];
        auto [lo, hi] = buf.equal_range(txid);
        bool dup = false;
        std::vector<uint8_t> bytes;
        for (auto i = lo; i != hi && !dup; ++i) {
            if (bytes.empty()) bytes = encode_message(msg);
            dup = encode_message(i->second) == bytes;
        }
        if (!dup) buf.emplace(txid, msg);
    }
    send(WorkerId::make_execution(id_.row, uint16_t(col)), msg);
    for (const auto& m : read_to_)
        if (m.index == col) send(m, msg);
}

void ExecutionWorker::arm_tick() {
    if (tick_armed_) return;
    tick_armed_ = true;
    net_.timer(id_, cfg_.recovery_retry_delay, 0);
}

std::vector<WorkerId> ExecutionWorker::row_mates() const {
    std::vector<WorkerId> out;
    for (uint16_t s = 0; s < cfg_.n_shards; s++)
        if (s != id_.index) out.push_back(WorkerId::make_execution(id_.row, s));
    return out;
}

std::vector<WorkerId> ExecutionWorker::column(uint32_t shard) const {
    std::vector<WorkerId> out;
    for (uint16_t r = 0; r < cfg_.n_clusters; r++) {
        WorkerId w = WorkerId::make_execution(r, uint16_t(shard));
        if (w != id_) out.push_back(w);
    }
    return out;
}

}  // namespace shardexec
