#include "shardexec/engine.hpp"

#include <algorithm>

#include "shardexec/errors.hpp"

namespace shardexec {

namespace {

SimNet::Options merged_net(const EngineOptions& o) {
    SimNet::Options n = o.net;
    n.suspicion_delay = o.cfg.suspicion_delay;
    return n;
}

}  // namespace

Engine::Engine(EngineOptions opt, std::vector<Object> genesis, std::vector<Batch> batches)
    : opt_(std::move(opt)),
      genesis_(std::move(genesis)),
      batches_(std::move(batches)),
      net_(merged_net(opt_)) {
    const EngineConfig& cfg = opt_.cfg;

    uint64_t next_index = 1;
    entries_.reserve(batches_.size());
    for (size_t i = 0; i < batches_.size(); i++) {
        const Batch& b = batches_[i];
        for (const auto& t : b.txs) {
            if (t.index != next_index)
                throw ProtocolError(ProtocolError::Kind::bad_state,
                                    "batch sequence gap at tx " + std::to_string(next_index));
            next_index++;
        }
        entries_.push_back(CommitEntry{uint64_t(i), b.id});
    }
    total_txs_ = next_index - 1;
    submit_.assign(total_txs_ + 1, 0);
    first_done_.assign(total_txs_ + 1, 0);

    seqs_.resize(cfg.n_sequencers);
    for (uint32_t q = 0; q < cfg.n_sequencers; q++) {
        seqs_[q] = std::make_unique<SequencingWorker>(q, cfg.n_sequencers, cfg.n_shards);
        if (!opt_.dir.empty()) {
            auto d = opt_.dir / ("seq" + std::to_string(q));
            std::filesystem::create_directories(d);
            seqs_[q]->attach_storage(d);
        }
        for (const auto& b : batches_)
            if (sequencer_of(b.id, cfg.n_sequencers) == q) seqs_[q]->ingest_batch(b);
        WorkerId id = WorkerId::make_sequencer(uint16_t(q));
        net_.add_worker(id, [this, q](const Envelope& e) {
            if (seqs_[q]) dispatch_sequencer(q, e);
        });
    }

    grid_.resize(size_t(cfg.n_clusters) * cfg.n_shards);
    for (uint16_t r = 0; r < cfg.n_clusters; r++)
        for (uint16_t s = 0; s < cfg.n_shards; s++) {
            WorkerId id = WorkerId::make_execution(r, s);
            std::filesystem::path d;
            if (!opt_.dir.empty()) {
                d = opt_.dir / ("ew" + std::to_string(r) + "_" + std::to_string(s));
                std::filesystem::create_directories(d);
            }
            size_t slot = size_t(r) * cfg.n_shards + s;
            grid_[slot] = std::make_unique<ExecutionWorker>(id, cfg, net_, d, genesis_);
            grid_[slot]->boot_fresh();
            net_.add_worker(id, [this, slot](const Envelope& e) {
                if (grid_[slot]) grid_[slot]->handle(e);
            });
        }

    net_.add_worker(WorkerId::make_primary(), [this](const Envelope& e) { dispatch_primary(e); });
    if (!entries_.empty()) net_.timer(WorkerId::make_primary(), opt_.commit_pace, 0);

    net_.set_fault_hook([this](const WorkerId& w, bool up) {
        const EngineConfig& c = opt_.cfg;
        if (w.kind == WorkerId::execution) {
            size_t slot = size_t(w.row) * c.n_shards + w.index;
            if (!up) {
                grid_[slot].reset();
                return;
            }
            std::filesystem::path d;
            if (!opt_.dir.empty())
                d = opt_.dir / ("ew" + std::to_string(w.row) + "_" + std::to_string(w.index));
            grid_[slot] = std::make_unique<ExecutionWorker>(w, c, net_, d, genesis_);
            grid_[slot]->reboot();
            return;
        }
        if (w.kind == WorkerId::sequencer) {
            if (opt_.dir.empty())
                throw ProtocolError(ProtocolError::Kind::bad_state,
                                    "sequencer fault scheduled without storage");
            if (!up) {
                seqs_[w.index].reset();
                return;
            }
            auto& sq = seqs_[w.index];
            sq = std::make_unique<SequencingWorker>(w.index, c.n_sequencers, c.n_shards);
            sq->attach_storage(opt_.dir / ("seq" + std::to_string(w.index)));
            // Anything dispatched before the crash was persisted; ask the
            // primary for the tail of the commit sequence.
            net_.send(w, WorkerId::make_primary(), ReplayRequestMsg{sq->watermark()});
            return;
        }
        throw ProtocolError(ProtocolError::Kind::bad_state,
                            "fault scheduled for unsupported worker " + w.str());
    });

    net_.set_tracer([this](uint64_t t, const Envelope& e) { on_delivery(t, e); });
}

void Engine::schedule_fault(uint64_t time, const WorkerId& w, bool up) {
    net_.schedule_fault(time, w, up);
}

void Engine::slow_worker(const WorkerId& w, uint64_t factor) {
    net_.slow(w, factor);
}

void Engine::slow_row(uint16_t row, uint64_t factor) {
    for (uint16_t s = 0; s < opt_.cfg.n_shards; s++)
        net_.slow(WorkerId::make_execution(row, s), factor);
}

void Engine::add_observer(SimNet::Tracer t) {
    observers_.push_back(std::move(t));
}

ExecutionWorker* Engine::worker(uint16_t row, uint16_t shard) {
    return grid_[size_t(row) * opt_.cfg.n_shards + shard].get();
}

const ExecutionWorker* Engine::worker(uint16_t row, uint16_t shard) const {
    return grid_[size_t(row) * opt_.cfg.n_shards + shard].get();
}

void Engine::dispatch_primary(const Envelope& env) {
    if (std::get_if<TimerMsg>(&env.msg)) {
        if (sent_entries_ >= entries_.size()) return;
        const CommitEntry& e = entries_[sent_entries_];
        uint64_t first = 1;
        for (size_t i = 0; i < sent_entries_; i++) first += batches_[i].txs.size();
        for (size_t k = 0; k < batches_[sent_entries_].txs.size(); k++)
            submit_[first + k] = net_.now();
        for (uint32_t q = 0; q < opt_.cfg.n_sequencers; q++)
            net_.send(WorkerId::make_primary(), WorkerId::make_sequencer(uint16_t(q)),
                      CommitEntryMsg{e});
        sent_entries_++;
        if (sent_entries_ < entries_.size())
            net_.timer(WorkerId::make_primary(), opt_.commit_pace, 0);
        return;
    }
    if (auto* p = std::get_if<ReplayRequestMsg>(&env.msg)) {
        for (size_t i = p->from_batch_idx; i < sent_entries_; i++)
            net_.send(WorkerId::make_primary(), env.src, CommitEntryMsg{entries_[i]});
        return;
    }
    if (std::get_if<SuspectMsg>(&env.msg)) return;
    throw ProtocolError(ProtocolError::Kind::bad_state,
                        std::string("unexpected message at primary: ") +
                            type_name(type_of(env.msg)));
}

void Engine::dispatch_sequencer(uint32_t q, const Envelope& env) {
    if (auto* p = std::get_if<CommitEntryMsg>(&env.msg)) {
        fan_out(q, seqs_[q]->process_commit(p->entry));
        return;
    }
    if (auto* p = std::get_if<ReplayRequestMsg>(&env.msg)) {
        if (env.src.kind != WorkerId::execution)
            throw ProtocolError(ProtocolError::Kind::bad_state,
                                "replay request from " + env.src.str());
        WorkerId self = WorkerId::make_sequencer(uint16_t(q));
        for (auto& m : seqs_[q]->replay_for_shard(env.src.index, p->from_batch_idx))
            net_.send(self, env.src, std::move(m));
        return;
    }
    if (std::get_if<SuspectMsg>(&env.msg)) return;
    throw ProtocolError(ProtocolError::Kind::bad_state,
                        std::string("unexpected message at sequencer: ") +
                            type_name(type_of(env.msg)));
}

void Engine::fan_out(uint32_t seq, const std::vector<std::pair<uint32_t, ProposeMsg>>& out) {
    WorkerId self = WorkerId::make_sequencer(uint16_t(seq));
    for (const auto& [shard, msg] : out)
        for (uint16_t r = 0; r < opt_.cfg.n_clusters; r++)
            net_.send(self, WorkerId::make_execution(r, uint16_t(shard)), msg);
}

void Engine::on_delivery(uint64_t time, const Envelope& env) {
    sweep_progress(time);
    if (opt_.strict_invariants) check_invariants();

    uint64_t lo = UINT64_MAX, hi = 0;
    for (uint16_t r = 0; r < opt_.cfg.n_clusters; r++) {
        uint64_t row_j = UINT64_MAX;
        bool live = false;
        for (uint16_t s = 0; s < opt_.cfg.n_shards; s++) {
            const ExecutionWorker* w = worker(r, s);
            if (!w) continue;
            live = true;
            row_j = std::min(row_j, w->watermark());
        }
        if (!live) continue;
        lo = std::min(lo, row_j);
        hi = std::max(hi, row_j);
    }
    if (lo != UINT64_MAX) max_row_lead_ = std::max(max_row_lead_, hi - lo);

    for (const auto& obs : observers_) obs(time, env);
}

void Engine::sweep_progress(uint64_t time) {
    uint64_t cur = done_high_;
    for (const auto& w : grid_)
        if (w) cur = std::max(cur, w->watermark());
    cur = std::min(cur, total_txs_);
    for (uint64_t i = done_high_ + 1; i <= cur; i++) first_done_[i] = time;
    done_high_ = std::max(done_high_, cur);
}

void Engine::check_invariants() const {
    const EngineConfig& cfg = opt_.cfg;
    for (const auto& w : grid_) {
        if (!w) continue;
        if (w->checkpoints_held() > cfg.checkpoint_limit)
            throw ProtocolError(ProtocolError::Kind::bad_state,
                                w->id().str() + " holds " + std::to_string(w->checkpoints_held()) +
                                    " checkpoints, limit " + std::to_string(cfg.checkpoint_limit));
        if (cfg.checkpoints_enabled && w->watermark() > w->exec_limit())
            throw ProtocolError(ProtocolError::Kind::bad_state,
                                w->id().str() + " ran past its execution gate");
    }
}

void Engine::run() {
    net_.run(opt_.run_budget);
    check_invariants();
    sweep_progress(net_.now());
    for (const auto& w : grid_) {
        if (!w) continue;
        if (w->watermark() != total_txs_ || w->syncing())
            throw ProtocolError(ProtocolError::Kind::scenario_timeout,
                                w->id().str() + " stalled at " + std::to_string(w->watermark()) +
                                    "/" + std::to_string(total_txs_) +
                                    (w->syncing() ? " while syncing" : ""));
    }
    for (const auto& sq : seqs_)
        if (sq) sq->check_dissemination();
}

std::optional<Digest> Engine::row_digest(uint16_t row) const {
    std::map<ObjectId, Object> state;
    for (uint16_t s = 0; s < opt_.cfg.n_shards; s++) {
        const ExecutionWorker* w = worker(row, s);
        if (!w) return std::nullopt;
        auto part = w->store().latest_state();
        state.insert(part.begin(), part.end());
    }
    return digest_of_state(state);
}

Digest Engine::final_digest() const {
    std::optional<Digest> agreed;
    for (uint16_t r = 0; r < opt_.cfg.n_clusters; r++) {
        auto d = row_digest(r);
        if (!d) continue;
        if (agreed && *agreed != *d)
            throw ProtocolError(ProtocolError::Kind::digest_mismatch,
                                "row " + std::to_string(r) + " diverged from the rest");
        agreed = d;
    }
    if (!agreed)
        throw ProtocolError(ProtocolError::Kind::bad_state, "no fully live row to read");

    abort_flags();  // conflict check across replicas
    return *agreed;
}

std::map<uint64_t, bool> Engine::abort_flags() const {
    // A replica restored from a checkpoint has no history below its restore
    // point, so workers may cover different stretches of the sequence. They
    // must never contradict each other where they overlap.
    std::map<uint64_t, bool> merged;
    bool any = false;
    for (const auto& w : grid_) {
        if (!w) continue;
        any = true;
        for (const auto& [idx, a] : w->abort_flags()) {
            auto [it, fresh] = merged.emplace(idx, a);
            if (!fresh && it->second != a)
                throw ProtocolError(
                    ProtocolError::Kind::digest_mismatch,
                    w->id().str() + " abort history diverged at " + std::to_string(idx));
        }
    }
    if (!any) throw ProtocolError(ProtocolError::Kind::bad_state, "no live worker");
    return merged;
}

uint64_t Engine::aborted_count() const {
    uint64_t n = 0;
    for (const auto& [idx, a] : abort_flags())
        if (a) n++;
    return n;
}

uint64_t Engine::executed_count() const {
    return uint64_t(abort_flags().size()) - aborted_count();
}

uint64_t Engine::submit_time(uint64_t idx) const {
    return submit_.at(idx);
}

uint64_t Engine::first_done_time(uint64_t idx) const {
    return first_done_.at(idx);
}

}  // namespace shardexec
