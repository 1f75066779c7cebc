#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "shardexec/object.hpp"

namespace shardexec {

// One persisted checkpoint: the flushed image at a transaction boundary plus
// the batch index the propose stream must resume from after a restore (the
// scheduler is rebuilt from scratch, so the mapping back to batches has to
// ride along). Body is the canonical codec; a sha256 trailer over the body
// makes torn or corrupt files detectable instead of silently restorable.
struct Checkpoint {
    uint32_t shard = 0;
    uint64_t boundary = 0;
    uint64_t resume_batch = 0;
    std::map<ObjectId, Object> image;

    std::vector<uint8_t> encode() const;
    // Throws ProtocolError(digest_mismatch) on a bad trailer, CodecError on
    // malformed bytes.
    static Checkpoint decode(std::span<const uint8_t> data);

    void write_file(const std::filesystem::path& p) const;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, uint64_t boundary);

// Every valid checkpoint in dir keyed by boundary; corrupt or torn files are
// skipped (a crash mid-write must not wedge the reboot).
std::map<uint64_t, Checkpoint> load_checkpoint_dir(const std::filesystem::path& dir);

// Newest valid boundary in dir, nullopt when none remain.
std::optional<Checkpoint> newest_checkpoint(const std::filesystem::path& dir);

}  // namespace shardexec
