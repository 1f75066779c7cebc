#include "shardexec/sequencer.hpp"

#include <fstream>

#include "shardexec/hash.hpp"
#include "shardexec/log.hpp"

namespace shardexec {

namespace {

constexpr const char* kBatchesFile = "batches.bin";
constexpr const char* kCommitsFile = "commits.bin";
constexpr const char* kWatermarkFile = "watermark.bin";

std::vector<uint8_t> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Decodes concatenated records until the data runs out. A torn tail record
// (crash mid-append) is dropped and the file truncated to the good prefix,
// so the next append starts at a record boundary.
template <typename T, typename F>
void load_records(const std::filesystem::path& p, F&& accept) {
    if (!std::filesystem::exists(p)) return;
    auto data = read_file(p);
    Reader r(data);
    size_t good = 0;
    try {
        while (!r.done()) {
            T rec = T::decode(r);
            good = data.size() - r.remaining();
            accept(std::move(rec));
        }
    } catch (const CodecError&) {
    }
    if (good < data.size()) std::filesystem::resize_file(p, good);
}

}  // namespace

SequencingWorker::SequencingWorker(uint32_t index, uint32_t n_sequencers, uint32_t n_shards)
    : index_(index), n_sequencers_(n_sequencers), n_shards_(n_shards) {}

void SequencingWorker::attach_storage(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    dir_ = dir;

    load_records<Batch>(dir / kBatchesFile, [&](Batch b) { batches_.emplace(b.id, std::move(b)); });
    load_records<CommitEntry>(dir / kCommitsFile, [&](CommitEntry e) {
        auto [it, fresh] = entries_.emplace(e.batch_idx, e);
        if (!fresh && it->second.batch_id != e.batch_id)
            throw ProtocolError(ProtocolError::bad_state, "committed sequence fork on disk");
    });

    // Watermark file holds one u64 per dispatched batch; the last complete
    // record wins, a torn 8-byte tail is dropped.
    if (auto p = dir / kWatermarkFile; std::filesystem::exists(p)) {
        auto data = read_file(p);
        size_t whole = data.size() / 8 * 8;
        if (whole > 0) next_ = Reader({data.data() + whole - 8, 8}).u64();
        if (whole < data.size()) std::filesystem::resize_file(p, whole);
    }
}

void SequencingWorker::append_record(const std::filesystem::path& file,
                                     const std::vector<uint8_t>& bytes) {
    std::ofstream out(file, std::ios::binary | std::ios::app);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw ProtocolError(ProtocolError::bad_state, "append failed: " + file.string());
}

void SequencingWorker::persist_watermark() {
    if (!dir_) return;
    Writer w;
    w.u64(next_);
    append_record(*dir_ / kWatermarkFile, w.bytes());
}

bool SequencingWorker::ingest_batch(const Batch& b) {
    if (sequencer_of(b.id, n_sequencers_) != index_) return false;
    if (batches_.contains(b.id)) return true;
    if (dir_) {
        Writer w;
        b.encode(w);
        append_record(*dir_ / kBatchesFile, w.bytes());
    }
    batches_.emplace(b.id, b);
    return true;
}

ProposeMsg SequencingWorker::build_propose(const CommitEntry& e, const Batch* owned,
                                           uint32_t shard) const {
    ProposeMsg m;
    m.batch_idx = e.batch_idx;
    m.batch_id = e.batch_id;
    m.sequencer = index_;
    if (owned) {
        if (!owned->txs.empty()) {
            m.first_index = owned->txs.front().index;
            m.tx_count = static_cast<uint32_t>(owned->txs.size());
        }
        for (const auto& t : owned->txs)
            if (t.references_shard(shard, n_shards_)) m.txs.push_back(t);
    }
    return m;
}

std::vector<std::pair<uint32_t, ProposeMsg>> SequencingWorker::process_commit(const CommitEntry& e) {
    if (e.batch_idx < next_) return {};
    auto it = entries_.find(e.batch_idx);
    if (it != entries_.end()) {
        if (it->second.batch_id != e.batch_id)
            throw ProtocolError(ProtocolError::bad_state,
                                "committed sequence fork at batch " + std::to_string(e.batch_idx));
        return {};
    }
    if (dir_) {
        Writer w;
        e.encode(w);
        append_record(*dir_ / kCommitsFile, w.bytes());
    }
    entries_.emplace(e.batch_idx, e);
    return drain();
}

std::vector<std::pair<uint32_t, ProposeMsg>> SequencingWorker::drain() {
    std::vector<std::pair<uint32_t, ProposeMsg>> out;
    while (true) {
        auto it = entries_.find(next_);
        if (it == entries_.end()) break;
        const CommitEntry& e = it->second;

        const Batch* owned = nullptr;
        if (sequencer_of(e.batch_id, n_sequencers_) == index_) {
            auto bi = batches_.find(e.batch_id);
            if (bi == batches_.end()) {
                blocked_ = e.batch_id;
                break;
            }
            owned = &bi->second;
        }
        blocked_.reset();

        for (uint32_t shard = 0; shard < n_shards_; shard++)
            out.emplace_back(shard, build_propose(e, owned, shard));
        next_++;
        persist_watermark();
    }
    return out;
}

std::vector<ProposeMsg> SequencingWorker::replay_for_shard(uint32_t shard,
                                                           uint64_t from_idx) const {
    std::vector<ProposeMsg> out;
    for (uint64_t idx = from_idx; idx < next_; idx++) {
        const CommitEntry& e = entries_.at(idx);
        const Batch* owned = nullptr;
        if (sequencer_of(e.batch_id, n_sequencers_) == index_) owned = &batches_.at(e.batch_id);
        out.push_back(build_propose(e, owned, shard));
    }
    return out;
}

void SequencingWorker::check_dissemination() const {
    if (blocked_)
        throw ProtocolError(ProtocolError::missing_batch,
                            "S" + std::to_string(index_) + " blocked at batch " +
                                std::to_string(next_) + " (id " + short_hex(*blocked_) + ")");
}

}  // namespace shardexec
