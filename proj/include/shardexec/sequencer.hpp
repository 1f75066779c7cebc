#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "shardexec/batch.hpp"
#include "shardexec/config.hpp"
#include "shardexec/errors.hpp"
#include "shardexec/message.hpp"

namespace shardexec {

// One sequencing worker. Stores the batches routed to it, consumes the
// committed sequence in batch-index order, and emits one ProposeMsg per
// shard per batch: the owning sequencer sends the filtered transaction list
// (and the batch's global index range), every other sequencer sends an empty
// heartbeat so the receivers' propose watermarks can advance.
//
// Dispatch is strictly in-order. An entry whose batch is routed to this
// worker but absent from the store blocks the drain; later entries buffer
// until the batch arrives. A run that ends blocked is a data-dissemination
// failure, surfaced by check_dissemination().
//
// With storage attached, batches, accepted commit entries and the dispatch
// watermark go to three append-only files. A restart reloads them and
// resumes from the watermark: nothing is skipped, and only a crash inside
// the dispatch-then-persist window can repeat a batch (receivers drop the
// identical redelivery). Torn tail records from such a crash are discarded
// on load.
class SequencingWorker {
  public:
    SequencingWorker(uint32_t index, uint32_t n_sequencers, uint32_t n_shards);

    // Loads any existing state from dir and appends all future mutations.
    void attach_storage(const std::filesystem::path& dir);

    // True iff the batch is routed to this worker. Duplicates are ignored.
    bool ingest_batch(const Batch& b);

    // Buffers the entry and drains every batch that became dispatchable, as
    // (shard, message) pairs in batch then shard order. Entries at an
    // already-dispatched index are ignored; a second entry at a buffered
    // index must carry the same batch id.
    std::vector<std::pair<uint32_t, ProposeMsg>> process_commit(const CommitEntry& e);

    // Retries the drain; used after ingest_batch cleared a block.
    std::vector<std::pair<uint32_t, ProposeMsg>> drain();

    // Re-derives the propose stream of one shard for dispatched batches
    // [from_idx, watermark), for a recovering execution worker.
    std::vector<ProposeMsg> replay_for_shard(uint32_t shard, uint64_t from_idx) const;

    // Next undispatched batch index.
    uint64_t watermark() const { return next_; }

    bool blocked() const { return blocked_.has_value(); }
    void check_dissemination() const;

    size_t stored_batches() const { return batches_.size(); }
    uint32_t index() const { return index_; }

  private:
    ProposeMsg build_propose(const CommitEntry& e, const Batch* owned, uint32_t shard) const;
    void append_record(const std::filesystem::path& file, const std::vector<uint8_t>& bytes);
    void persist_watermark();

    uint32_t index_;
    uint32_t n_sequencers_;
    uint32_t n_shards_;

    std::unordered_map<BatchId, Batch, DigestHash> batches_;
    std::map<uint64_t, CommitEntry> entries_;  // dispatched entries kept for replay
    uint64_t next_ = 0;
    std::optional<BatchId> blocked_;

    std::optional<std::filesystem::path> dir_;
};

}  // namespace shardexec
