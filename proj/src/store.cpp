#include "shardexec/store.hpp"

#include "shardexec/bytes.hpp"
#include "shardexec/errors.hpp"
#include "shardexec/hash.hpp"

namespace shardexec {

void ObjectStore::seed(const std::vector<Object>& objects) {
    for (const auto& o : objects) {
        live_[o.id] = o;
        if (versioned_) vers_[o.id].labels[0] = o;
        image_[o.id] = o;
    }
}

const Object* ObjectStore::live(const ObjectId& id) const {
    auto it = live_.find(id);
    return it == live_.end() ? nullptr : &it->second;
}

StoreView::Ver ObjectStore::version_state(const ObjectId& id, uint64_t label,
                                          const Object** out) const {
    if (out) *out = nullptr;
    auto it = vers_.find(id);
    if (it == vers_.end()) {
        // Label 0 is the pre-run state, fixed at seeding; absence there is
        // definitive. Higher labels may still materialize.
        return label == 0 ? Ver::gone : Ver::not_yet;
    }
    auto lit = it->second.labels.find(label);
    if (lit == it->second.labels.end()) return label == 0 ? Ver::gone : Ver::not_yet;
    if (!lit->second.has_value()) return Ver::gone;
    if (out) *out = &*lit->second;
    return Ver::present;
}

std::vector<ObjectId> ObjectStore::apply_effects(const std::vector<Object>& mutated,
                                                 const std::vector<ObjectId>& deleted) {
    std::vector<ObjectId> created;
    for (const auto& o : mutated) {
        if (o.version == 0) created.push_back(o.id);
        live_[o.id] = o;
    }
    for (const auto& d : deleted) live_.erase(d);
    return created;
}

void ObjectStore::materialize(const ObjectId& id, uint64_t label, std::optional<Object> value) {
    auto& cell = vers_[id];
    auto [it, inserted] = cell.labels.emplace(label, value);
    if (!inserted) {
        // Redelivery must carry the identical value.
        if (it->second != value)
            throw ProtocolError(ProtocolError::bad_state, "conflicting version materialization");
        return;
    }
    // Keep the plain live view coherent in split mode: the highest label wins.
    if (std::prev(cell.labels.end())->first == label) {
        if (it->second.has_value())
            live_[id] = *it->second;
        else
            live_.erase(id);
    }
}

void ObjectStore::log_effects(uint64_t tx_index, std::vector<Object> mutated,
                              std::vector<ObjectId> deleted) {
    if (!keep_log_) return;
    if (tx_index <= flushed_)
        throw ProtocolError(ProtocolError::bad_state, "effect logged below flush watermark");
    auto [it, inserted] = log_.emplace(tx_index, Effects{std::move(mutated), std::move(deleted)});
    if (!inserted)
        throw ProtocolError(ProtocolError::bad_state, "effect logged twice");
    (void)it;
}

void ObjectStore::flush_to(uint64_t boundary) {
    if (!keep_log_)
        throw ProtocolError(ProtocolError::bad_state, "flush without effect log");
    while (!log_.empty() && log_.begin()->first <= boundary) {
        auto it = log_.begin();
        if (it->first != flushed_ + 1)
            throw ProtocolError(ProtocolError::bad_state, "effect log gap at flush");
        for (const auto& o : it->second.mutated) image_[o.id] = o;
        for (const auto& d : it->second.deleted) image_.erase(d);
        flushed_ = it->first;
        log_.erase(it);
    }
    if (flushed_ < boundary)
        throw ProtocolError(ProtocolError::bad_state, "flush boundary not covered by log");
}

void ObjectStore::reset_from_image(std::map<ObjectId, Object> img, uint64_t boundary) {
    image_ = std::move(img);
    flushed_ = boundary;
    log_.clear();
    live_.clear();
    vers_.clear();
    for (const auto& [id, o] : image_) {
        live_[id] = o;
        if (versioned_) vers_[id].labels[0] = o;
    }
}

std::map<ObjectId, Object> ObjectStore::latest_state() const {
    std::map<ObjectId, Object> out;
    for (const auto& [id, o] : live_) out[id] = o;
    return out;
}

Digest digest_of_state(const std::map<ObjectId, Object>& state) {
    Writer w;
    w.u32(static_cast<uint32_t>(state.size()));
    for (const auto& [id, o] : state) o.encode(w);
    return sha256(w.bytes());
}

Digest ObjectStore::state_digest() const { return digest_of_state(latest_state()); }

}  // namespace shardexec
