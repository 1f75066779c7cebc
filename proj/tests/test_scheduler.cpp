#include <map>
#include <string>

#include "doctest.h"
#include "shardexec/errors.hpp"
#include "shardexec/hash.hpp"
#include "shardexec/scheduler.hpp"
#include "shardexec/store.hpp"

using namespace shardexec;

namespace {

Digest did(uint64_t v) {
    Writer w;
    w.u64(v);
    return sha256(w.bytes());
}

// The running example: five transactions over four objects.
//   T1 writes o1
//   T2 writes o1, o3
//   T3 reads o1, o2; writes o4
//   T4 reads o2, o3; writes o4
//   T5 reads o1; writes o2, o3
struct Example {
    ObjectId o1 = did(1), o2 = did(2), o3 = did(3), o4 = did(4);
    std::vector<Transaction> txs;

    Example() {
        auto mk = [](uint64_t idx, std::vector<ObjectId> reads, std::vector<ObjectId> writes) {
            Transaction t;
            t.index = idx;
            t.digest = did(1000 + idx);
            t.read_set = std::move(reads);
            t.write_set = std::move(writes);
            t.entry = {Entry::increment_counter, 0};
            return t;
        };
        txs = {mk(1, {}, {o1}),         mk(2, {}, {o1, o3}),     mk(3, {o1, o2}, {o4}),
               mk(4, {o2, o3}, {o4}),   mk(5, {o1}, {o2, o3})};
    }

    std::function<std::string(const ObjectId&)> namer() const {
        std::map<ObjectId, std::string> names{{o1, "o1"}, {o2, "o2"}, {o3, "o3"}, {o4, "o4"}};
        return [names](const ObjectId& id) {
            auto it = names.find(id);
            return it == names.end() ? std::string("?") : it->second;
        };
    }

    ObjectStore seeded_store(bool versioned) const {
        ObjectStore s(versioned, false);
        std::vector<Object> objs;
        for (const auto& oid : {o1, o2, o3, o4}) objs.push_back(Object{oid, 1, {}, Counter{0}});
        s.seed(objs);
        return s;
    }

    ProposeMsg propose() const {
        ProposeMsg m;
        m.batch_idx = 0;
        m.batch_id = Batch::compute_id(txs);
        m.sequencer = 0;
        m.first_index = 1;
        m.tx_count = static_cast<uint32_t>(txs.size());
        m.txs = txs;
        return m;
    }
};

Scheduler make(Mode mode, const Example& ex, uint64_t j = 0) {
    Scheduler s(mode, 0, 1, 1);
    auto cands = s.process_propose(ex.propose(), j);
    REQUIRE(cands.size() == 5);
    return s;
}

}  // namespace

TEST_CASE("pending queues group writes singly and merge consecutive reads") {
    Example ex;
    Scheduler s = make(Mode::base, ex);
    CHECK(s.dump_queues(ex.namer()) ==
          "Pending[o1]: (W, [Tx1]) (W, [Tx2]) (R, [Tx3, Tx5])\n"
          "Pending[o2]: (R, [Tx3, Tx4]) (W, [Tx5])\n"
          "Pending[o3]: (W, [Tx2]) (R, [Tx4]) (W, [Tx5])\n"
          "Pending[o4]: (W, [Tx3]) (W, [Tx4])\n");
    CHECK_NOTHROW(s.validate_acyclic());
}

TEST_CASE("queue advance pops groups in order and reports new heads") {
    PendingQueues q;
    ObjectId oid = did(42);
    q.enqueue_read(oid, 3);
    q.enqueue_read(oid, 4);
    q.enqueue_write(oid, 5);
    CHECK(q.at_head(oid, 3));
    CHECK(q.at_head(oid, 4));
    CHECK(!q.at_head(oid, 5));

    CHECK(q.advance(oid, 3).empty());  // Tx4 still holds the read group
    CHECK(q.at_head(oid, 4));
    auto heads = q.advance(oid, 4);
    CHECK(heads == std::vector<uint64_t>{5});
    CHECK_THROWS_AS(q.advance(oid, 4), ProtocolError);
    CHECK(q.advance(oid, 5).empty());
    CHECK(!q.has_queue(oid));
    CHECK_THROWS_AS(q.advance(oid, 5), ProtocolError);
}

TEST_CASE("advance out of order is a protocol violation") {
    PendingQueues q;
    ObjectId oid = did(42);
    q.enqueue_write(oid, 1);
    q.enqueue_write(oid, 2);
    CHECK_THROWS_AS(q.advance(oid, 2), ProtocolError);
}

TEST_CASE("head transaction triggers, blocked one does not") {
    Example ex;
    Scheduler s = make(Mode::base, ex);
    auto store = ex.seeded_store(false);

    auto t5 = s.try_trigger(5, store, 0);
    CHECK(!t5.sent);  // behind Tx2 on o1

    auto t1 = s.try_trigger(1, store, 0);
    REQUIRE(t1.sent);
    REQUIRE(t1.slots.size() == 1);
    CHECK(t1.slots[0].oid == ex.o1);
    REQUIRE(t1.slots[0].obj.has_value());

    // Repeat trigger is a no-op until a new reason arrives.
    CHECK(!s.try_trigger(1, store, 0).sent);
}

TEST_CASE("results advance write locks and surface the next group") {
    Example ex;
    Scheduler s = make(Mode::base, ex);
    auto store = ex.seeded_store(false);

    REQUIRE(s.try_trigger(1, store, 0).sent);
    REQUIRE(s.advanceable(1));
    auto c1 = s.on_result(1);
    CHECK(c1 == std::vector<uint64_t>{2});

    REQUIRE(s.try_trigger(2, store, 1).sent);
    auto c2 = s.on_result(2);
    // o1 head becomes (R,[Tx3,Tx5]); o3 head becomes (R,[Tx4]).
    REQUIRE(c2.size() == 3);
    CHECK(std::count(c2.begin(), c2.end(), 3) == 1);
    CHECK(std::count(c2.begin(), c2.end(), 5) == 1);
    CHECK(std::count(c2.begin(), c2.end(), 4) == 1);
}

TEST_CASE("base mode releases read locks at send time") {
    Example ex;
    Scheduler s = make(Mode::base, ex);
    auto store = ex.seeded_store(false);

    REQUIRE(s.try_trigger(1, store, 0).sent);
    s.on_result(1);
    REQUIRE(s.try_trigger(2, store, 1).sent);
    s.on_result(2);

    // Tx3: head on o1 (read), o2 (read), o4 (write). One message, all slots.
    auto t3 = s.try_trigger(3, store, 2);
    REQUIRE(t3.sent);
    REQUIRE(t3.slots.size() == 3);
    CHECK(t3.slots[0].oid < t3.slots[1].oid);
    CHECK(t3.slots[1].oid < t3.slots[2].oid);
    // Its reads left groups that still hold members, so no new heads yet.
    CHECK(t3.follow_up.empty());

    // Tx4 shares the o2 read group but its o4 write sits behind Tx3's.
    CHECK(!s.try_trigger(4, store, 2).sent);
    // Tx5's o2/o3 writes sit behind Tx4's reads.
    CHECK(!s.try_trigger(5, store, 2).sent);

    // Only the o4 write lock is left for Tx3's result to advance.
    CHECK(s.advanceable(3));
    auto c3 = s.on_result(3);
    CHECK(c3 == std::vector<uint64_t>{4});

    // Tx4's send releases its reads, which surfaces Tx5: the ready message
    // for Tx5 goes out before Tx4's result exists.
    auto t4 = s.try_trigger(4, store, 3);
    REQUIRE(t4.sent);
    int fives = 0;
    for (uint64_t c : t4.follow_up) fives += c == 5;
    CHECK(fives == 2);  // new head of both o2 and o3
    REQUIRE(s.try_trigger(5, store, 3).sent);

    s.on_result(4);
    s.on_result(5);
    CHECK_NOTHROW(s.validate_acyclic());
}

TEST_CASE("dynamic mode holds read locks until the result") {
    Example ex;
    Scheduler s = make(Mode::dynamic, ex);
    auto store = ex.seeded_store(false);

    REQUIRE(s.try_trigger(1, store, 0).sent);
    s.on_result(1);
    REQUIRE(s.try_trigger(2, store, 1).sent);
    s.on_result(2);
    REQUIRE(s.try_trigger(3, store, 2).sent);
    auto c3 = s.on_result(3);
    CHECK(c3 == std::vector<uint64_t>{4});

    auto t4 = s.try_trigger(4, store, 3);
    REQUIRE(t4.sent);
    // Reads are not released at send: no follow-up candidates.
    CHECK(t4.follow_up.empty());

    // Tx5 needs the o2/o3 writes: blocked until Tx4's result, not its send.
    CHECK(!s.try_trigger(5, store, 3).sent);
    auto c4 = s.on_result(4);
    bool t5_ready = false;
    for (uint64_t c : c4) t5_ready = t5_ready || c == 5;
    CHECK(t5_ready);
    CHECK(s.try_trigger(5, store, 4).sent);
}

TEST_CASE("split mode waits on writers only") {
    Example ex;
    Scheduler s = make(Mode::split, ex);

    // Expected waits-on edges: Tx2<-Tx1 (o1), Tx3<-Tx2 (o1), Tx5<-Tx2 (o1,
    // o3), Tx4<-Tx2 (o3) and the write-consumes-prior-version edge Tx4<-Tx3
    // (o4). Readers never block writers: Tx5's o2 write has no edge to
    // Tx3/Tx4.
    auto edges = s.waiting_edges();
    std::set<std::pair<uint64_t, uint64_t>> set(edges.begin(), edges.end());
    CHECK(set == std::set<std::pair<uint64_t, uint64_t>>{
                     {2, 1}, {3, 2}, {5, 2}, {4, 2}, {4, 3}});
    CHECK_NOTHROW(s.validate_acyclic());

    auto store = ex.seeded_store(true);
    REQUIRE(s.try_trigger(1, store, 0).sent);
    CHECK(!s.try_trigger(2, store, 0).sent);

    // Tx1 done: its o1 output becomes label 1.
    store.materialize(ex.o1, 1, Object{ex.o1, 2, {}, Counter{1}});
    auto c1 = s.on_result(1);
    CHECK(c1 == std::vector<uint64_t>{2});
    REQUIRE(s.try_trigger(2, store, 1).sent);

    store.materialize(ex.o1, 2, Object{ex.o1, 3, {}, Counter{2}});
    store.materialize(ex.o3, 1, Object{ex.o3, 2, {}, Counter{1}});
    auto c2 = s.on_result(2);
    std::set<uint64_t> unblocked(c2.begin(), c2.end());
    CHECK(unblocked == std::set<uint64_t>{3, 5});

    // The split-queue property: Tx5 dispatches before Tx3/Tx4 results.
    auto t5 = s.try_trigger(5, store, 2);
    REQUIRE(t5.sent);
    REQUIRE(t5.slots.size() == 3);
    auto t3 = s.try_trigger(3, store, 2);
    REQUIRE(t3.sent);
    CHECK(!s.try_trigger(4, store, 2).sent);  // waits on Tx3's o4 version

    store.materialize(ex.o4, 1, Object{ex.o4, 2, {}, Counter{1}});
    auto c3 = s.on_result(3);
    CHECK(c3 == std::vector<uint64_t>{4});
    CHECK(s.try_trigger(4, store, 3).sent);
}

TEST_CASE("split mode reads the version its label names") {
    // T1 writes o1, T2 reads o1: T2's slot must be T1's output even if a
    // later write already materialized.
    ObjectId o1 = did(7);
    auto mk = [&](uint64_t idx, std::vector<ObjectId> r, std::vector<ObjectId> w) {
        Transaction t;
        t.index = idx;
        t.digest = did(900 + idx);
        t.read_set = std::move(r);
        t.write_set = std::move(w);
        t.entry = {Entry::increment_counter, 0};
        return t;
    };
    ProposeMsg pm;
    pm.batch_idx = 0;
    pm.sequencer = 0;
    pm.first_index = 1;
    pm.tx_count = 3;
    pm.txs = {mk(1, {}, {o1}), mk(2, {o1}, {}), mk(3, {}, {o1})};
    pm.batch_id = Batch::compute_id(pm.txs);

    Scheduler s(Mode::split, 0, 1, 1);
    s.process_propose(pm, 0);
    ObjectStore store(true, false);
    store.seed({Object{o1, 1, {}, Counter{0}}});

    // Tx3 does not wait on reader Tx2, only on writer Tx1.
    auto edges = s.waiting_edges();
    std::set<std::pair<uint64_t, uint64_t>> set(edges.begin(), edges.end());
    CHECK(set == std::set<std::pair<uint64_t, uint64_t>>{{2, 1}, {3, 1}});

    REQUIRE(s.try_trigger(1, store, 0).sent);
    store.materialize(o1, 1, Object{o1, 2, {}, Counter{1}});
    s.on_result(1);

    auto t3 = s.try_trigger(3, store, 1);
    REQUIRE(t3.sent);
    store.materialize(o1, 2, Object{o1, 3, {}, Counter{2}});

    auto t2 = s.try_trigger(2, store, 1);
    REQUIRE(t2.sent);
    REQUIRE(t2.slots.size() == 1);
    REQUIRE(t2.slots[0].obj.has_value());
    CHECK(std::get<Counter>(t2.slots[0].obj->payload).value == 1);  // label 1, not 2
}

TEST_CASE("propose buffer waits for every sequencer") {
    Example ex;
    Scheduler s(Mode::base, 0, 1, 2);

    ProposeMsg own = ex.propose();
    CHECK(s.process_propose(own, 0).empty());  // sequencer 1 still missing

    ProposeMsg hb;
    hb.batch_idx = 0;
    hb.batch_id = own.batch_id;
    hb.sequencer = 1;
    auto cands = s.process_propose(hb, 0);
    CHECK(cands.size() == 5);
    CHECK(s.propose_watermark() == 1);
}

TEST_CASE("out-of-order batches release in order") {
    Example ex;
    Scheduler s(Mode::base, 0, 1, 1);

    ProposeMsg b1;
    b1.batch_idx = 1;
    b1.sequencer = 0;
    b1.first_index = 6;
    b1.tx_count = 1;
    Transaction t6;
    t6.index = 6;
    t6.digest = did(1006);
    t6.write_set = {ex.o1};
    t6.entry = {Entry::increment_counter, 0};
    b1.txs = {t6};
    b1.batch_id = Batch::compute_id(b1.txs);

    CHECK(s.process_propose(b1, 0).empty());
    CHECK(s.propose_watermark() == 0);
    auto cands = s.process_propose(ex.propose(), 0);
    CHECK(cands.size() == 6);
    CHECK(s.propose_watermark() == 2);
    // Tx6 queued behind the example writes on o1.
    auto store = ex.seeded_store(false);
    CHECK(!s.try_trigger(6, store, 0).sent);
}

TEST_CASE("identical propose redelivery is ignored, conflicting is fatal") {
    Example ex;
    Scheduler s(Mode::base, 0, 1, 2);
    ProposeMsg own = ex.propose();
    CHECK(s.process_propose(own, 0).empty());
    CHECK(s.process_propose(own, 0).empty());  // same bytes, ignored

    ProposeMsg conflict = own;
    conflict.txs[0].entry.arg = 99;
    CHECK_THROWS_AS(s.process_propose(conflict, 0), ProtocolError);
}

TEST_CASE("propose replay after restore skips executed transactions") {
    Example ex;
    Scheduler s(Mode::base, 0, 1, 1);
    // Boundary 3: Tx1..Tx3 already in the checkpoint.
    auto cands = s.process_propose(ex.propose(), 3);
    CHECK(cands == std::vector<uint64_t>{4, 5});
    CHECK(s.tx(3) == nullptr);
    CHECK(s.tx(4) != nullptr);
    auto store = ex.seeded_store(false);
    REQUIRE(s.try_trigger(4, store, 3).sent);
}

TEST_CASE("missing objects park the transaction until created") {
    ObjectId present = did(50), absent = did(51);
    Transaction t;
    t.index = 5;
    t.digest = did(905);
    t.write_set = {present, absent};
    t.entry = {Entry::transfer, 1};
    ProposeMsg pm;
    pm.batch_idx = 0;
    pm.sequencer = 0;
    pm.first_index = 5;
    pm.tx_count = 1;
    pm.txs = {t};
    pm.batch_id = Batch::compute_id(pm.txs);

    Scheduler s(Mode::base, 0, 1, 1);
    s.process_propose(pm, 0);
    ObjectStore store(false, false);
    store.seed({Object{present, 1, {}, Coin{10}}});

    // j=0 < idx-1: the object may still be created by Tx1..Tx4.
    CHECK(!s.try_trigger(5, store, 0).sent);

    store.apply_effects({Object{absent, 0, {}, Coin{0}}}, {});
    auto woken = s.on_materialized(absent, 0);
    CHECK(woken == std::vector<uint64_t>{5});
    auto trig = s.try_trigger(5, store, 0);
    REQUIRE(trig.sent);
    CHECK(trig.slots[0].obj.has_value());
    CHECK(trig.slots[1].obj.has_value());
}

TEST_CASE("watermark proves absence and releases a hole slot") {
    ObjectId present = did(50), absent = did(51);
    Transaction t;
    t.index = 5;
    t.digest = did(905);
    t.write_set = {present, absent};
    t.entry = {Entry::transfer, 1};
    ProposeMsg pm;
    pm.batch_idx = 0;
    pm.sequencer = 0;
    pm.first_index = 5;
    pm.tx_count = 1;
    pm.txs = {t};
    pm.batch_id = Batch::compute_id(pm.txs);

    Scheduler s(Mode::base, 0, 1, 1);
    s.process_propose(pm, 0);
    ObjectStore store(false, false);
    store.seed({Object{present, 1, {}, Coin{10}}});

    CHECK(!s.try_trigger(5, store, 0).sent);
    CHECK(s.on_watermark(3).empty());  // 5 > 3+1, still parked
    auto woken = s.on_watermark(4);
    CHECK(woken == std::vector<uint64_t>{5});
    auto trig = s.try_trigger(5, store, 4);
    REQUIRE(trig.sent);
    REQUIRE(trig.slots.size() == 2);
    // Slot order follows oid order; find the absent one.
    bool hole = false;
    for (const auto& sl : trig.slots)
        if (sl.oid == absent) hole = !sl.obj.has_value();
    CHECK(hole);
}

TEST_CASE("augmentation re-arms the trigger with the child queued") {
    // Two readers of the same parent discover the same child; the child
    // queue orders them by augmentation arrival. Child objects are only ever
    // reached through their parent, so no transaction declares them.
    ObjectId parent = did(60), child = did(61);
    auto dyn = [&](uint64_t idx) {
        Transaction t;
        t.index = idx;
        t.digest = did(900 + idx);
        t.read_set = {parent};
        t.entry = {Entry::dynamic_child_access, 5};
        return t;
    };
    ProposeMsg pm;
    pm.batch_idx = 0;
    pm.sequencer = 0;
    pm.first_index = 1;
    pm.tx_count = 2;
    pm.txs = {dyn(1), dyn(2)};
    pm.batch_id = Batch::compute_id(pm.txs);

    Scheduler s(Mode::dynamic, 0, 1, 1);
    s.process_propose(pm, 0);
    ObjectStore store(false, false);
    Table tab;
    tab.children[5] = child;
    store.seed({Object{parent, 1, {}, tab}, Object{child, 1, parent, Counter{0}}});

    // Both share the parent read group, so both dispatch and discover.
    REQUIRE(s.try_trigger(1, store, 0).sent);
    REQUIRE(s.try_trigger(2, store, 0).sent);

    Transaction aug1 = dyn(1);
    aug1.added_writes = {child};
    auto cands = s.apply_augmentation(aug1);
    CHECK(cands == std::vector<uint64_t>{1});
    CHECK(!s.ready_sent(1));
    // Stale redelivery of the same augmentation is a no-op.
    CHECK(s.apply_augmentation(aug1).empty());

    auto trig = s.try_trigger(1, store, 0);
    REQUIRE(trig.sent);
    REQUIRE(trig.slots.size() == 2);  // parent and child

    Transaction aug2 = dyn(2);
    aug2.added_writes = {child};
    CHECK(s.apply_augmentation(aug2) == std::vector<uint64_t>{2});
    // Tx2's child write queued behind Tx1's.
    CHECK(!s.try_trigger(2, store, 0).sent);

    auto c = s.on_result(1);
    CHECK(c == std::vector<uint64_t>{2});
    auto trig2 = s.try_trigger(2, store, 1);
    REQUIRE(trig2.sent);
    REQUIRE(trig2.slots.size() == 2);
    s.on_result(2);
    CHECK(s.executed(2));
}

TEST_CASE("purge drops executed state and keeps batch ranges usable") {
    Example ex;
    Scheduler s = make(Mode::base, ex);
    auto store = ex.seeded_store(false);
    for (uint64_t i = 1; i <= 5; i++) {
        auto trig = s.try_trigger(i, store, i - 1);
        if (trig.sent) {
            for (uint64_t c : trig.follow_up) s.try_trigger(c, store, i - 1);
        }
        s.on_result(i);
    }
    CHECK(s.resume_batch_for(2) == 0);  // Tx3 lives in batch 0
    s.purge_below(5);
    CHECK(s.scheduled_live() == 0);
    CHECK(s.resume_batch_for(5) == 1);  // next batch
}
