#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "shardexec/rng.hpp"
#include "shardexec/sequencer.hpp"

using namespace shardexec;

namespace {

Digest did(uint64_t v) {
    Writer w;
    w.u64(v);
    return sha256(w.bytes());
}

// An object id landing on the given shard, distinct per (salt, shard).
ObjectId oid_on_shard(uint64_t salt, uint32_t shard, uint32_t n_shards) {
    for (uint64_t nonce = 0;; nonce++) {
        Writer w;
        w.u64(salt);
        w.u64(nonce);
        ObjectId id = sha256(w.bytes());
        if (shard_of(id, n_shards) == shard) return id;
    }
}

Transaction tx_on_shards(uint64_t idx, const std::vector<uint32_t>& shards, uint32_t n_shards) {
    Transaction t;
    t.index = idx;
    t.digest = did(7000 + idx);
    for (size_t i = 0; i < shards.size(); i++)
        t.write_set.push_back(oid_on_shard(idx * 100 + i, shards[i], n_shards));
    t.entry = {Entry::increment_counter, 0};
    return t;
}

// Batch whose id routes to the wanted sequencer: perturb a padding tx index
// until the content hash lands there.
Batch batch_for_sequencer(std::vector<Transaction> txs, uint32_t seq, uint32_t n_seq) {
    for (uint64_t nonce = 0;; nonce++) {
        std::vector<Transaction> probe = txs;
        if (!probe.empty()) probe.back().entry.arg = nonce;
        BatchId id = Batch::compute_id(probe);
        if (sequencer_of(id, n_seq) == seq) return Batch{id, std::move(probe)};
    }
}

struct TmpDir {
    std::filesystem::path path;
    explicit TmpDir(const char* tag) {
        path = std::filesystem::temp_directory_path() /
               ("sx_seq_" + std::string(tag) + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TmpDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("batches route by id; duplicates do not grow the store") {
    SequencingWorker s0(0, 2, 1), s1(1, 2, 1);
    Batch mine = batch_for_sequencer({tx_on_shards(1, {0}, 1)}, 0, 2);
    Batch theirs = batch_for_sequencer({tx_on_shards(2, {0}, 1)}, 1, 2);

    CHECK(s0.ingest_batch(mine));
    CHECK(!s0.ingest_batch(theirs));
    CHECK(s0.stored_batches() == 1);
    CHECK(s0.ingest_batch(mine));
    CHECK(s0.stored_batches() == 1);

    CHECK(s1.ingest_batch(theirs));
    CHECK(!s1.ingest_batch(mine));
}

TEST_CASE("owner splits a batch per shard and reports the index range") {
    SequencingWorker s(0, 1, 2);
    Transaction a = tx_on_shards(1, {0}, 2);
    Transaction b = tx_on_shards(2, {1}, 2);
    Transaction both = tx_on_shards(3, {0, 1}, 2);
    Batch batch{Batch::compute_id({a, b, both}), {a, b, both}};
    REQUIRE(s.ingest_batch(batch));

    auto out = s.process_commit({0, batch.id});
    REQUIRE(out.size() == 2);
    CHECK(out[0].first == 0);
    CHECK(out[1].first == 1);
    for (const auto& [shard, m] : out) {
        CHECK(m.batch_idx == 0);
        CHECK(m.batch_id == batch.id);
        CHECK(m.sequencer == 0);
        CHECK(m.first_index == 1);
        CHECK(m.tx_count == 3);
    }
    CHECK(out[0].second.txs == std::vector<Transaction>{a, both});
    CHECK(out[1].second.txs == std::vector<Transaction>{b, both});
    CHECK(s.watermark() == 1);
}

TEST_CASE("empty batch still produces one message per shard") {
    SequencingWorker s(0, 1, 3);
    Batch empty{Batch::compute_id({}), {}};
    REQUIRE(s.ingest_batch(empty));
    auto out = s.process_commit({0, empty.id});
    REQUIRE(out.size() == 3);
    for (const auto& [shard, m] : out) {
        CHECK(m.txs.empty());
        CHECK(m.tx_count == 0);
        CHECK(m.first_index == 0);
    }
}

TEST_CASE("non-owner emits empty heartbeats for the same batch index") {
    SequencingWorker s0(0, 2, 2);
    Batch theirs = batch_for_sequencer({tx_on_shards(1, {0}, 2)}, 1, 2);

    auto out = s0.process_commit({0, theirs.id});
    REQUIRE(out.size() == 2);
    for (const auto& [shard, m] : out) {
        CHECK(m.batch_idx == 0);
        CHECK(m.batch_id == theirs.id);
        CHECK(m.sequencer == 0);
        CHECK(m.txs.empty());
        CHECK(m.tx_count == 0);
    }
    CHECK(s0.watermark() == 1);
    CHECK(s0.stored_batches() == 0);
}

TEST_CASE("per-shard split of a random batch matches the brute-force filter") {
    const uint32_t n_shards = 4;
    Rng rng(0xA11CE);
    std::vector<Transaction> txs;
    for (uint64_t i = 1; i <= 50; i++) {
        std::vector<uint32_t> shards;
        uint32_t n_refs = static_cast<uint32_t>(rng.range(1, 3));
        for (uint32_t k = 0; k < n_refs; k++)
            shards.push_back(static_cast<uint32_t>(rng.below(n_shards)));
        txs.push_back(tx_on_shards(i, shards, n_shards));
    }
    Batch batch{Batch::compute_id(txs), txs};

    SequencingWorker s(0, 1, n_shards);
    REQUIRE(s.ingest_batch(batch));
    auto out = s.process_commit({0, batch.id});
    REQUIRE(out.size() == n_shards);

    std::vector<const Transaction*> covered;
    for (const auto& [shard, m] : out) {
        std::vector<Transaction> expect;
        for (const auto& t : txs)
            if (t.references_shard(shard, n_shards)) expect.push_back(t);
        CHECK(m.txs == expect);
        for (const auto& t : m.txs)
            covered.push_back(&*std::find(txs.begin(), txs.end(), t));
    }
    // Union over shards covers the whole batch.
    std::sort(covered.begin(), covered.end());
    covered.erase(std::unique(covered.begin(), covered.end()), covered.end());
    CHECK(covered.size() == txs.size());
}

TEST_CASE("dispatch is gapless and in batch order regardless of arrival") {
    SequencingWorker s(0, 1, 1);
    std::vector<Batch> batches;
    for (uint64_t i = 0; i < 3; i++) {
        batches.push_back(Batch{Batch::compute_id({tx_on_shards(i + 1, {0}, 1)}),
                                {tx_on_shards(i + 1, {0}, 1)}});
        REQUIRE(s.ingest_batch(batches.back()));
    }

    CHECK(s.process_commit({2, batches[2].id}).empty());
    CHECK(s.process_commit({1, batches[1].id}).empty());
    auto out = s.process_commit({0, batches[0].id});
    REQUIRE(out.size() == 3);
    CHECK(out[0].second.batch_idx == 0);
    CHECK(out[1].second.batch_idx == 1);
    CHECK(out[2].second.batch_idx == 2);
    CHECK(s.watermark() == 3);
}

TEST_CASE("a missing owned batch blocks dispatch until it arrives") {
    SequencingWorker s(0, 1, 1);
    Batch b0{Batch::compute_id({tx_on_shards(1, {0}, 1)}), {tx_on_shards(1, {0}, 1)}};
    Batch b1{Batch::compute_id({tx_on_shards(2, {0}, 1)}), {tx_on_shards(2, {0}, 1)}};
    Batch b2{Batch::compute_id({tx_on_shards(3, {0}, 1)}), {tx_on_shards(3, {0}, 1)}};
    REQUIRE(s.ingest_batch(b0));
    REQUIRE(s.ingest_batch(b2));

    auto out = s.process_commit({0, b0.id});
    CHECK(out.size() == 1);
    CHECK(s.process_commit({1, b1.id}).empty());
    CHECK(s.process_commit({2, b2.id}).empty());
    CHECK(s.blocked());
    CHECK_THROWS_AS(s.check_dissemination(), ProtocolError);
    CHECK(s.watermark() == 1);

    REQUIRE(s.ingest_batch(b1));
    auto rest = s.drain();
    REQUIRE(rest.size() == 2);
    CHECK(rest[0].second.batch_idx == 1);
    CHECK(rest[1].second.batch_idx == 2);
    CHECK(!s.blocked());
    CHECK_NOTHROW(s.check_dissemination());
}

TEST_CASE("duplicate commit entries are ignored, forks rejected") {
    SequencingWorker s(0, 1, 1);
    Batch b{Batch::compute_id({tx_on_shards(1, {0}, 1)}), {tx_on_shards(1, {0}, 1)}};
    REQUIRE(s.ingest_batch(b));
    CHECK(s.process_commit({0, b.id}).size() == 1);
    CHECK(s.process_commit({0, b.id}).empty());

    Batch other{Batch::compute_id({tx_on_shards(2, {0}, 1)}), {tx_on_shards(2, {0}, 1)}};
    CHECK(s.process_commit({1, other.id}).empty());  // buffered, batch not owned by idx yet
    CHECK_THROWS_AS(s.process_commit({1, b.id}), ProtocolError);
}

TEST_CASE("restart resumes from the watermark without skipping or repeating") {
    TmpDir dir("restart");
    std::vector<Batch> batches;
    std::vector<CommitEntry> entries;
    for (uint64_t i = 0; i < 6; i++) {
        Transaction t = tx_on_shards(i + 1, {static_cast<uint32_t>(i % 2)}, 2);
        batches.push_back(Batch{Batch::compute_id({t}), {t}});
        entries.push_back({i, batches.back().id});
    }

    auto run = [&](SequencingWorker& s, size_t first_entry, size_t last_entry) {
        std::vector<std::pair<uint32_t, ProposeMsg>> stream;
        for (size_t i = first_entry; i < last_entry; i++) {
            auto out = s.process_commit(entries[i]);
            stream.insert(stream.end(), out.begin(), out.end());
        }
        return stream;
    };

    // Crash-free reference.
    SequencingWorker ref(0, 1, 2);
    for (const auto& b : batches) ref.ingest_batch(b);
    auto want = run(ref, 0, entries.size());

    // Crash after three dispatches, reboot, replay the committed sequence
    // from the persisted watermark.
    SequencingWorker a(0, 1, 2);
    a.attach_storage(dir.path);
    for (const auto& b : batches) a.ingest_batch(b);
    auto stream = run(a, 0, 3);
    CHECK(a.watermark() == 3);

    SequencingWorker b2(0, 1, 2);
    b2.attach_storage(dir.path);
    CHECK(b2.watermark() == 3);
    CHECK(b2.stored_batches() == batches.size());
    auto post = run(b2, b2.watermark(), entries.size());
    stream.insert(stream.end(), post.begin(), post.end());

    REQUIRE(stream.size() == want.size());
    for (size_t i = 0; i < want.size(); i++) {
        CHECK(stream[i].first == want[i].first);
        CHECK(encode_message(Message{stream[i].second}) ==
              encode_message(Message{want[i].second}));
    }

    // Entries re-fed below the watermark are dropped.
    CHECK(b2.process_commit(entries[0]).empty());
}

TEST_CASE("torn tail records are dropped on reload") {
    TmpDir dir("torn");
    Transaction t = tx_on_shards(1, {0}, 1);
    Batch b{Batch::compute_id({t}), {t}};
    {
        SequencingWorker s(0, 1, 1);
        s.attach_storage(dir.path);
        REQUIRE(s.ingest_batch(b));
        CHECK(s.process_commit({0, b.id}).size() == 1);
    }
    // Simulate a crash mid-append on every file.
    for (const char* name : {"batches.bin", "commits.bin", "watermark.bin"}) {
        std::ofstream out(dir.path / name, std::ios::binary | std::ios::app);
        out.write("\x01\x02\x03", 3);
    }

    SequencingWorker s(0, 1, 1);
    s.attach_storage(dir.path);
    CHECK(s.stored_batches() == 1);
    CHECK(s.watermark() == 1);

    // The truncated files accept appends again.
    Transaction t2 = tx_on_shards(2, {0}, 1);
    Batch b2{Batch::compute_id({t2}), {t2}};
    REQUIRE(s.ingest_batch(b2));
    CHECK(s.process_commit({1, b2.id}).size() == 1);

    SequencingWorker again(0, 1, 1);
    again.attach_storage(dir.path);
    CHECK(again.stored_batches() == 2);
    CHECK(again.watermark() == 2);
}

TEST_CASE("replay rebuilds the dispatched propose stream for one shard") {
    SequencingWorker s(0, 2, 2);
    Batch mine = batch_for_sequencer({tx_on_shards(1, {0, 1}, 2)}, 0, 2);
    Batch theirs = batch_for_sequencer({tx_on_shards(2, {1}, 2)}, 1, 2);
    REQUIRE(s.ingest_batch(mine));

    auto live = s.process_commit({0, mine.id});
    auto more = s.process_commit({1, theirs.id});
    live.insert(live.end(), more.begin(), more.end());

    for (uint32_t shard : {0u, 1u}) {
        std::vector<ProposeMsg> want;
        for (const auto& [sh, m] : live)
            if (sh == shard) want.push_back(m);
        auto got = s.replay_for_shard(shard, 0);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < want.size(); i++)
            CHECK(encode_message(Message{got[i]}) == encode_message(Message{want[i]}));
    }
    CHECK(s.replay_for_shard(0, 1).size() == 1);
    CHECK(s.replay_for_shard(0, 2).empty());
    CHECK(s.replay_for_shard(0, 99).empty());
}
