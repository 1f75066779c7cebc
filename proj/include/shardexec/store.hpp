#pragma once

#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

#include "shardexec/object.hpp"

namespace shardexec {

// Read interface the scheduler uses to resolve object data. Split mode
// addresses versions by label: the scheduler assigns label v to the v-th
// write of an object it has scheduled; label 0 is the pre-run state.
struct StoreView {
    enum class Ver : uint8_t {
        not_yet,  // the producing write has not landed
        present,  // value available
        gone,     // tombstone: deleted, or definitively never materialized
    };

    virtual ~StoreView() = default;
    virtual const Object* live(const ObjectId& id) const = 0;
    virtual Ver version_state(const ObjectId& id, uint64_t label, const Object** out) const = 0;
};

// Per-shard object state. Keeps three layers:
//  - the live view the scheduler reads (latest in base/dynamic mode,
//    label-addressed in split mode),
//  - an ordered effect log, applied to
//  - the flushed image, which advances strictly in transaction-index order so
//    a checkpoint at a boundary is exactly the sequential prefix state even
//    when results landed out of order.
class ObjectStore : public StoreView {
public:
    explicit ObjectStore(bool versioned, bool keep_log = true)
        : versioned_(versioned), keep_log_(keep_log) {}

    void seed(const std::vector<Object>& objects);

    const Object* live(const ObjectId& id) const override;
    Ver version_state(const ObjectId& id, uint64_t label, const Object** out) const override;

    // base/dynamic: apply effects to the live view; returns created ids
    // (version 0) for missing-index retriggers.
    std::vector<ObjectId> apply_effects(const std::vector<Object>& mutated,
                                        const std::vector<ObjectId>& deleted);

    // split: materialize one version slot. nullopt marks a tombstone.
    void materialize(const ObjectId& id, uint64_t label, std::optional<Object> value);

    // Sequential effects of one transaction index (empty for aborts and
    // heartbeat portions). Every index must be logged exactly once.
    void log_effects(uint64_t tx_index, std::vector<Object> mutated, std::vector<ObjectId> deleted);

    // Applies logged effects with index <= boundary to the image, in index
    // order. The log must be gapless up to the boundary.
    void flush_to(uint64_t boundary);

    uint64_t flushed() const { return flushed_; }
    const std::map<ObjectId, Object>& image() const { return image_; }

    // Checkpoint load: image becomes the whole state; split labels restart
    // at 0 (labels are local to one scheduler incarnation).
    void reset_from_image(std::map<ObjectId, Object> img, uint64_t boundary);

    // Latest live state, tombstones dropped; key-ordered so the encoding and
    // digest are canonical.
    std::map<ObjectId, Object> latest_state() const;
    Digest state_digest() const;

    size_t log_size() const { return log_.size(); }

private:
    bool versioned_;
    bool keep_log_;

    std::unordered_map<ObjectId, Object, DigestHash> live_;
    struct VerCell {
        std::map<uint64_t, std::optional<Object>> labels;
    };
    std::unordered_map<ObjectId, VerCell, DigestHash> vers_;

    struct Effects {
        std::vector<Object> mutated;
        std::vector<ObjectId> deleted;
    };
    std::map<uint64_t, Effects> log_;
    std::map<ObjectId, Object> image_;
    uint64_t flushed_ = 0;
};

Digest digest_of_state(const std::map<ObjectId, Object>& state);

}  // namespace shardexec
