#pragma once

#include <stdexcept>
#include <string>

namespace shardexec {

// Conditions with a named contract. not_at_head and bad_state indicate a
// protocol implementation bug and are fatal in tests.
struct ProtocolError : std::runtime_error {
    enum Kind {
        duplicate_propose,  // same (batch_idx, sequencer) with different content
        missing_batch,      // committed entry names a batch this sequencer never stored
        not_at_head,        // lock advanced for a transaction that is not at the queue head
        digest_mismatch,    // checkpoint bytes fail their digest trailer
        scenario_timeout,   // simulation exceeded its time budget before quiescing
        bad_state,          // internal invariant violated
    };

    ProtocolError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
    Kind kind;
};

}  // namespace shardexec
