#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <memory>

#include "doctest.h"
#include "shardexec/errors.hpp"
#include "shardexec/simnet.hpp"
#include "shardexec/vm.hpp"
#include "shardexec/worker.hpp"

using namespace shardexec;
namespace fs = std::filesystem;

namespace {

// Deterministic object id that lands on a chosen shard.
ObjectId oid_on(uint32_t shard, uint32_t n_shards, uint64_t tag) {
    for (uint64_t salt = 0;; salt++) {
        Writer w;
        w.u64(tag);
        w.u64(salt);
        Digest d = sha256(w.bytes());
        if (shard_of(d, n_shards) == shard) return d;
    }
}

Digest tx_digest(uint64_t index) {
    Writer w;
    w.u64(0x7478ULL);
    w.u64(index);
    return sha256(w.bytes());
}

Transaction make_transfer(uint64_t index, const ObjectId& from, const ObjectId& to,
                          uint64_t amount) {
    Transaction t;
    t.digest = tx_digest(index);
    t.index = index;
    t.write_set = {from, to};
    t.entry = {Entry::transfer, amount};
    return t;
}

Transaction make_increment(uint64_t index, std::vector<ObjectId> counters) {
    Transaction t;
    t.digest = tx_digest(index);
    t.index = index;
    t.write_set = std::move(counters);
    t.entry = {Entry::increment_counter, 0};
    return t;
}

Transaction make_child_access(uint64_t index, const ObjectId& parent, uint64_t key) {
    Transaction t;
    t.digest = tx_digest(index);
    t.index = index;
    t.read_set = {parent};
    t.entry = {Entry::dynamic_child_access, key};
    return t;
}

// The per-shard view of one committed batch: the owning sequencer filters to
// transactions referencing the shard but always states the full index range.
ProposeMsg propose_for(uint32_t shard, uint32_t n_shards, uint64_t batch_idx,
                       uint64_t first_index, const std::vector<Transaction>& batch) {
    ProposeMsg p;
    p.batch_idx = batch_idx;
    {
        Writer w;
        w.u64(0xba7cULL);
        w.u64(batch_idx);
        p.batch_id = sha256(w.bytes());
    }
    p.sequencer = 0;
    p.first_index = first_index;
    p.tx_count = uint32_t(batch.size());
    for (const auto& t : batch)
        if (t.references_shard(shard, n_shards)) p.txs.push_back(t);
    return p;
}

struct RecordingNet final : Net {
    std::vector<Envelope> sent;
    void send(const WorkerId& src, const WorkerId& dst, Message m) override {
        sent.push_back(Envelope{src, dst, std::move(m)});
    }
    void timer(const WorkerId&, uint64_t, uint64_t) override {}
    uint64_t now() const override { return 0; }
};

fs::path fresh_dir(const char* name) {
    fs::path p = fs::temp_directory_path() /
                 ("shardexec_worker_" + std::to_string(getpid()) + "_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Envelope from_harness(const WorkerId& dst, Message m) {
    return Envelope{WorkerId::make_harness(), dst, std::move(m)};
}

const Object* live_of(const ExecutionWorker& w, const ObjectId& id) {
    return w.store().live(id);
}

uint64_t coin_balance(const ExecutionWorker& w, const ObjectId& id) {
    const Object* o = live_of(w, id);
    REQUIRE(o);
    return std::get<Coin>(o->payload).balance;
}

uint64_t counter_value(const ExecutionWorker& w, const ObjectId& id) {
    const Object* o = live_of(w, id);
    REQUIRE(o);
    return std::get<Counter>(o->payload).value;
}

}  // namespace

TEST_CASE("checkpoint blob roundtrip, digest guard and torn files") {
    Checkpoint cp;
    cp.shard = 3;
    cp.boundary = 200;
    cp.resume_batch = 7;
    Object a{oid_on(0, 4, 1), 5, {}, Coin{123}};
    Object b{oid_on(3, 4, 2), 1, {}, Counter{42}};
    cp.image = {{a.id, a}, {b.id, b}};

    auto bytes = cp.encode();
    Checkpoint back = Checkpoint::decode(bytes);
    CHECK(back.shard == 3);
    CHECK(back.boundary == 200);
    CHECK(back.resume_batch == 7);
    REQUIRE(back.image.size() == 2);
    CHECK(std::get<Coin>(back.image.at(a.id).payload).balance == 123);

    auto corrupt = bytes;
    corrupt[corrupt.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(Checkpoint::decode(corrupt), ProtocolError);

    fs::path dir = fresh_dir("cpdir");
    cp.write_file(checkpoint_path(dir, 200));
    Checkpoint old = cp;
    old.boundary = 100;
    old.resume_batch = 3;
    old.write_file(checkpoint_path(dir, 100));
    {
        // Torn tail: the newest file is half-written; loading must fall back.
        std::ofstream f(checkpoint_path(dir, 300), std::ios::binary | std::ios::trunc);
        f.write(reinterpret_cast<const char*>(bytes.data()), long(bytes.size() / 2));
    }
    auto loaded = load_checkpoint_dir(dir);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded.begin()->first == 100);
    CHECK(loaded.rbegin()->first == 200);
    auto newest = newest_checkpoint(dir);
    REQUIRE(newest);
    CHECK(newest->boundary == 200);
    fs::remove_all(dir);
}

TEST_CASE("single shard worker executes its own propose stream") {
    EngineConfig cfg;
    cfg.n_shards = 1;
    cfg.checkpoints_enabled = false;
    RecordingNet net;
    ObjectId c = oid_on(0, 1, 10);
    ExecutionWorker w(WorkerId::make_execution(0, 0), cfg, net, {}, {Object{c, 0, {}, Counter{0}}});
    w.boot_fresh();

    std::vector<Transaction> batch;
    for (uint64_t i = 1; i <= 5; i++) batch.push_back(make_increment(i, {c}));
    w.handle(from_harness(w.id(), propose_for(0, 1, 0, 1, batch)));

    CHECK(w.watermark() == 5);
    CHECK(counter_value(w, c) == 5);
    CHECK(w.counters().vm_runs == 5);
    CHECK(w.counters().applied == 5);
    CHECK(w.counters().aborted == 0);
    CHECK(net.sent.empty());  // single-cell grid: everything stays local
}

TEST_CASE("result arriving before its propose is stashed, then applied") {
    EngineConfig cfg;
    cfg.n_shards = 1;
    cfg.checkpoints_enabled = false;
    RecordingNet net;
    ObjectId c = oid_on(0, 1, 11);
    ExecutionWorker w(WorkerId::make_execution(0, 0), cfg, net, {}, {Object{c, 0, {}, Counter{0}}});
    w.boot_fresh();

    // A remote execution raced ahead of the propose stream.
    ResultMsg r;
    r.tx_digest = tx_digest(1);
    r.tx_index = 1;
    Object bumped{c, 1, {}, Counter{1}};
    r.mutated = {bumped};
    w.handle(from_harness(w.id(), r));
    CHECK(w.watermark() == 0);

    w.handle(from_harness(w.id(), propose_for(0, 1, 0, 1, {make_increment(1, {c})})));
    CHECK(w.watermark() == 1);
    CHECK(counter_value(w, c) == 1);
    // The stashed result satisfied the transaction; nothing ran locally.
    CHECK(w.counters().vm_runs == 0);
}

TEST_CASE("results for transactions with no local refs advance the watermark") {
    EngineConfig cfg;
    cfg.n_shards = 2;
    cfg.checkpoints_enabled = false;
    RecordingNet net;
    ExecutionWorker w(WorkerId::make_execution(0, 0), cfg, net, {}, {});
    w.boot_fresh();

    // Batch of three, none touching shard 0: the filtered propose is empty.
    ObjectId far = oid_on(1, 2, 12);
    std::vector<Transaction> batch;
    for (uint64_t i = 1; i <= 3; i++) batch.push_back(make_increment(i, {far}));
    w.handle(from_harness(w.id(), propose_for(0, 2, 0, 1, batch)));
    CHECK(w.scheduler().scheduled_live() == 0);

    for (uint64_t i = 1; i <= 3; i++) {
        ResultMsg r;
        r.tx_digest = tx_digest(i);
        r.tx_index = i;
        w.handle(from_harness(w.id(), r));
    }
    CHECK(w.watermark() == 3);

    // Effects aimed at a transaction this shard never scheduled are a bug.
    ResultMsg bad;
    bad.tx_digest = tx_digest(4);
    bad.tx_index = 4;
    bad.mutated = {Object{oid_on(0, 2, 13), 1, {}, Counter{9}}};
    w.handle(from_harness(w.id(), propose_for(0, 2, 1, 4, {make_increment(4, {far})})));
    CHECK_THROWS_AS(w.handle(from_harness(w.id(), bad)), ProtocolError);
}

TEST_CASE("split mode forwards versions through an aborted transaction") {
    EngineConfig cfg;
    cfg.n_shards = 1;
    cfg.mode = Mode::split;
    cfg.checkpoints_enabled = false;
    RecordingNet net;
    ObjectId a = oid_on(0, 1, 20);
    ObjectId b = oid_on(0, 1, 21);
    ExecutionWorker w(WorkerId::make_execution(0, 0), cfg, net, {},
                      {Object{a, 0, {}, Coin{5}}, Object{b, 0, {}, Coin{10}}});
    w.boot_fresh();

    std::vector<Transaction> batch = {
        make_transfer(1, a, b, 20),  // underflow, aborts
        make_transfer(2, a, b, 3),
    };
    w.handle(from_harness(w.id(), propose_for(0, 1, 0, 1, batch)));

    CHECK(w.watermark() == 2);
    REQUIRE(w.abort_flags().contains(1));
    CHECK(w.abort_flags().at(1));
    CHECK_FALSE(w.abort_flags().at(2));
    CHECK(coin_balance(w, a) == 2);
    CHECK(coin_balance(w, b) == 13);
    CHECK(w.counters().aborted == 1);
}

TEST_CASE("dynamic child discovery augments and completes the transaction") {
    EngineConfig cfg;
    cfg.n_shards = 1;
    cfg.mode = Mode::dynamic;
    cfg.checkpoints_enabled = false;
    RecordingNet net;
    ObjectId parent = oid_on(0, 1, 30);
    ObjectId child = oid_on(0, 1, 31);
    Object table{parent, 0, {}, Table{{{7, child}}}};
    Object kid{child, 0, parent, Counter{100}};
    ExecutionWorker w(WorkerId::make_execution(0, 0), cfg, net, {}, {table, kid});
    w.boot_fresh();

    w.handle(from_harness(w.id(), propose_for(0, 1, 0, 1, {make_child_access(1, parent, 7)})));

    CHECK(w.watermark() == 1);
    CHECK_FALSE(w.abort_flags().at(1));
    CHECK(counter_value(w, child) == 101);
    // First run stops at discovery, second completes with the child present.
    CHECK(w.counters().vm_runs == 2);
}

TEST_CASE("execution gate defers past stability and checkpoints stay bounded") {
    EngineConfig cfg;
    cfg.n_shards = 1;
    cfg.checkpoints_enabled = true;
    cfg.checkpoint_every = 2;
    cfg.checkpoint_limit = 2;
    RecordingNet net;
    fs::path dir = fresh_dir("gate");
    ObjectId c = oid_on(0, 1, 40);
    WorkerId wid = WorkerId::make_execution(0, 0);
    {
        ExecutionWorker w(wid, cfg, net, dir, {Object{c, 0, {}, Counter{0}}});
        w.boot_fresh();
        CHECK(w.exec_limit() == 4);

        // Far past the gate: must park, not apply.
        ResultMsg far;
        far.tx_digest = tx_digest(9);
        far.tx_index = 9;
        far.aborted = true;
        w.handle(from_harness(wid, far));
        CHECK(w.counters().deferred_total == 1);
        CHECK(w.watermark() == 0);

        std::vector<Transaction> batch;
        for (uint64_t i = 1; i <= 10; i++) batch.push_back(make_increment(i, {c}));
        w.handle(from_harness(wid, propose_for(0, 1, 0, 1, batch)));

        // Local execution reached index 9 before the gate released the
        // parked copy, which then dropped as stale; exactly one applied.
        CHECK(w.watermark() == 10);
        CHECK_FALSE(w.abort_flags().at(9));
        CHECK(counter_value(w, c) == 10);
        CHECK(w.counters().applied == 10);

        // The gate still binds at the advanced stability point.
        ResultMsg still_far;
        still_far.tx_digest = tx_digest(25);
        still_far.tx_index = 25;
        still_far.aborted = true;
        w.handle(from_harness(wid, still_far));
        CHECK(w.counters().deferred_total == 2);
        CHECK(w.watermark() == 10);

        CHECK(w.counters().checkpoints_written >= 4);
        CHECK(w.checkpoints_held() <= 2);
        CHECK(w.stable_boundary() == 10);

        size_t files = 0;
        for (auto& e : fs::directory_iterator(dir)) {
            (void)e;
            files++;
        }
        CHECK(files <= 2);
    }

    // Reboot: newest boundary restores, replay is requested from batch 1.
    net.sent.clear();
    ExecutionWorker back(wid, cfg, net, dir, {Object{c, 0, {}, Counter{0}}});
    back.reboot();
    CHECK(back.watermark() == 10);
    CHECK(back.last_checkpoint() == 10);
    CHECK(counter_value(back, c) == 10);
    bool asked = false;
    for (const auto& e : net.sent)
        if (auto* p = std::get_if<ReplayRequestMsg>(&e.msg)) {
            CHECK(e.dst == WorkerId::make_sequencer(0));
            CHECK(p->from_batch_idx == 1);
            asked = true;
        }
    CHECK(asked);
    fs::remove_all(dir);
}

namespace {

// Two-shard single-row rig over the simulator. Workers are held in slots so
// a fault hook can tear one down and rebuild it from its checkpoint dir.
struct RowRig {
    EngineConfig cfg;
    SimNet net;
    std::vector<fs::path> dirs;
    std::vector<Object> genesis;
    std::vector<std::unique_ptr<ExecutionWorker>> slots;
    std::vector<Envelope> seq_inbox;

    RowRig(EngineConfig c, SimNet::Options opt, std::vector<Object> gen,
           const std::vector<fs::path>& dd)
        : cfg(c), net(opt), dirs(dd), genesis(std::move(gen)) {
        slots.resize(cfg.n_shards);
        for (uint32_t s = 0; s < cfg.n_shards; s++) {
            WorkerId id = WorkerId::make_execution(0, uint16_t(s));
            slots[s] = std::make_unique<ExecutionWorker>(
                id, cfg, net, dirs.empty() ? fs::path{} : dirs[s], genesis);
            slots[s]->boot_fresh();
            net.add_worker(id, [this, s](const Envelope& e) {
                if (slots[s]) slots[s]->handle(e);
            });
        }
        net.add_worker(WorkerId::make_sequencer(0),
                       [this](const Envelope& e) { seq_inbox.push_back(e); });
        net.set_fault_hook([this](const WorkerId& w, bool up) {
            if (!up) {
                slots[w.index].reset();
                return;
            }
            slots[w.index] = std::make_unique<ExecutionWorker>(
                w, cfg, net, dirs.empty() ? fs::path{} : dirs[w.index], genesis);
            slots[w.index]->reboot();
        });
    }

    void inject_batch(uint64_t batch_idx, uint64_t first, const std::vector<Transaction>& batch) {
        for (uint32_t s = 0; s < cfg.n_shards; s++)
            net.send(WorkerId::make_sequencer(0), WorkerId::make_execution(0, uint16_t(s)),
                     propose_for(s, cfg.n_shards, batch_idx, first, batch));
    }
};

std::vector<Transaction> mixed_row_batch(uint64_t first, uint64_t count, const ObjectId& a,
                                         const ObjectId& b, const ObjectId& k) {
    // Transfers contend on both shards; every fourth transaction touches only
    // shard 1, so shard 0 advances on pure heartbeats for it.
    std::vector<Transaction> out;
    for (uint64_t i = first; i < first + count; i++) {
        if (i % 4 == 0)
            out.push_back(make_increment(i, {k}));
        else if (i % 2 == 1)
            out.push_back(make_transfer(i, a, b, 3));
        else
            out.push_back(make_transfer(i, b, a, 1));
    }
    return out;
}

}  // namespace

TEST_CASE("two shard row settles cross-shard traffic in every mode") {
    for (Mode mode : {Mode::base, Mode::dynamic, Mode::split}) {
        CAPTURE(mode_name(mode));
        EngineConfig cfg;
        cfg.n_shards = 2;
        cfg.mode = mode;
        cfg.checkpoints_enabled = false;
        ObjectId a = oid_on(0, 2, 50);
        ObjectId b = oid_on(1, 2, 51);
        ObjectId k = oid_on(1, 2, 52);
        std::vector<Object> gen = {Object{a, 0, {}, Coin{1000}}, Object{b, 0, {}, Coin{1000}},
                                   Object{k, 0, {}, Counter{0}}};
        RowRig rig(cfg, SimNet::Options{.latency_seed = 7}, gen, {});

        rig.inject_batch(0, 1, mixed_row_batch(1, 16, a, b, k));
        rig.net.run(30'000'000);

        // 16 txs: 8 odd transfers a->b of 3, 4 even b->a of 1, 4 increments.
        CHECK(rig.slots[0]->watermark() == 16);
        CHECK(rig.slots[1]->watermark() == 16);
        CHECK(coin_balance(*rig.slots[0], a) == 1000 - 8 * 3 + 4);
        CHECK(coin_balance(*rig.slots[1], b) == 1000 + 8 * 3 - 4);
        CHECK(counter_value(*rig.slots[1], k) == 4);
        CHECK(rig.slots[0]->counters().aborted == 0);
        CHECK(rig.slots[1]->counters().aborted == 0);
    }
}

TEST_CASE("crashed worker rejoins through checkpoint restore and a reader link") {
    EngineConfig cfg;
    cfg.n_shards = 2;
    cfg.checkpoints_enabled = true;
    cfg.checkpoint_every = 4;
    cfg.checkpoint_limit = 2;
    ObjectId a = oid_on(0, 2, 60);
    ObjectId b = oid_on(1, 2, 61);
    ObjectId k = oid_on(1, 2, 62);
    std::vector<Object> gen = {Object{a, 0, {}, Coin{1000}}, Object{b, 0, {}, Coin{1000}},
                               Object{k, 0, {}, Counter{0}}};
    std::vector<fs::path> dirs = {fresh_dir("rejoin0"), fresh_dir("rejoin1")};
    RowRig rig(cfg, SimNet::Options{.latency_seed = 3}, gen, dirs);

    rig.inject_batch(0, 1, mixed_row_batch(1, 12, a, b, k));
    rig.net.schedule_fault(5'000'000, WorkerId::make_execution(0, 0), false);
    rig.net.schedule_fault(8'000'000, WorkerId::make_execution(0, 0), true);
    rig.net.run(60'000'000);

    REQUIRE(rig.slots[0]);
    CHECK(rig.slots[0]->watermark() == 12);
    CHECK(rig.slots[0]->last_checkpoint() == 12);
    CHECK_FALSE(rig.slots[0]->syncing());

    // The rebooted side asked the sequencer to resume past its checkpoint.
    bool asked = false;
    for (const auto& e : rig.seq_inbox)
        if (auto* p = std::get_if<ReplayRequestMsg>(&e.msg)) {
            if (e.src == WorkerId::make_execution(0, 0)) {
                CHECK(p->from_batch_idx == 1);
                asked = true;
            }
        }
    CHECK(asked);

    // Both directions re-registered as readers of each other.
    CHECK(rig.slots[0]->counters().replays_served >= 1);
    CHECK(rig.slots[1]->counters().replays_served >= 1);

    rig.inject_batch(1, 13, mixed_row_batch(13, 4, a, b, k));
    rig.net.run(120'000'000);

    CHECK(rig.slots[0]->watermark() == 16);
    CHECK(rig.slots[1]->watermark() == 16);
    CHECK(coin_balance(*rig.slots[0], a) == 1000 - 8 * 3 + 4);
    CHECK(coin_balance(*rig.slots[1], b) == 1000 + 8 * 3 - 4);
    CHECK(counter_value(*rig.slots[1], k) == 4);
    for (auto& d : dirs) fs::remove_all(d);
}
