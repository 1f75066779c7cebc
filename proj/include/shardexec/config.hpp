#pragma once

#include <cstdint>

namespace shardexec {

// Scheduler operating mode.
//  base:    read locks release as soon as the shard ships its ReadyMsg.
//  dynamic: locks (reads included) hold until the result lands, which makes
//           mid-execution set augmentation safe.
//  split:   per-object-version scheduling; writers never wait on readers of
//           the prior version. Implies dynamic read semantics.
enum class Mode : uint8_t { base = 0, dynamic = 1, split = 2 };

const char* mode_name(Mode m);
bool parse_mode(const char* s, Mode& out);

struct EngineConfig {
    uint32_t n_shards = 1;
    uint32_t n_sequencers = 1;
    uint32_t n_clusters = 1;  // rows in the replication grid, 2*f_e+1
    uint32_t f_e = 0;
    Mode mode = Mode::base;

    bool checkpoints_enabled = true;
    uint64_t checkpoint_every = 100;  // boundary spacing K, in transaction indices
    uint32_t checkpoint_limit = 2;    // max checkpoints held before execution pauses

    uint64_t suspicion_delay = 200;      // crash -> detector notice, sim time
    uint64_t recovery_retry_delay = 500; // re-ask period while a recovery phase is starved
    uint32_t sync_retry_cap = 10;

    uint32_t quorum() const { return f_e + 1; }
};

}  // namespace shardexec
