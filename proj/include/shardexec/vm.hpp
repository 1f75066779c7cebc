#pragma once

#include <optional>
#include <unordered_map>
#include <vector>

#include "shardexec/object.hpp"
#include "shardexec/tx.hpp"

namespace shardexec::vm {

enum class AbortReason : uint8_t {
    none = 0,
    missing_object,       // a referenced object does not exist
    type_error,           // payload kind does not fit the entry function
    underflow,            // transfer amount exceeds the source balance
    ownership_violation,  // child accessed whose owner is not the declared parent
};

const char* abort_reason_name(AbortReason r);

struct ChildRequest {
    ObjectId child{};
    ObjectId parent{};
};

struct VmResult {
    bool aborted = false;
    AbortReason reason = AbortReason::none;
    std::optional<ChildRequest> discovered;  // needs augmentation, nothing executed
    std::vector<Object> mutated;             // versions already bumped
    std::vector<ObjectId> deleted;
};

using InputMap = std::unordered_map<ObjectId, Object, DigestHash>;

// Pure: the result depends only on the transaction and the provided objects.
// The caller resolves existence first; every object in `inputs` is live.
// A transaction referencing an object absent from `inputs` either aborts
// (static sets) or reports discovery (dynamic child).
VmResult execute(const Transaction& tx, const InputMap& inputs);

uint64_t fib(uint64_t n);  // iterative, wrapping at 2^64

}  // namespace shardexec::vm
