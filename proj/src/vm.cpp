#include "shardexec/vm.hpp"

namespace shardexec::vm {

const char* abort_reason_name(AbortReason r) {
    switch (r) {
        case AbortReason::none: return "none";
        case AbortReason::missing_object: return "missing_object";
        case AbortReason::type_error: return "type_error";
        case AbortReason::underflow: return "underflow";
        case AbortReason::ownership_violation: return "ownership_violation";
    }
    return "unknown";
}

uint64_t fib(uint64_t n) {
    uint64_t a = 0, b = 1;
    for (uint64_t i = 0; i < n; i++) {
        uint64_t t = a + b;
        a = b;
        b = t;
    }
    return a;
}

namespace {

// The burn result is discarded by contract; keep the loop observable so it
// cannot be elided in optimized builds.
inline void sink(uint64_t v) { asm volatile("" : : "r"(v)); }

VmResult abort_with(AbortReason r) {
    VmResult res;
    res.aborted = true;
    res.reason = r;
    return res;
}

const Object* find(const InputMap& inputs, const ObjectId& id) {
    auto it = inputs.find(id);
    return it == inputs.end() ? nullptr : &it->second;
}

Object bump(const Object& in) {
    Object out = in;
    out.version = in.version + 1;
    return out;
}

VmResult run_transfer(const Transaction& tx, const InputMap& inputs) {
    if (tx.write_set.size() != 2 || tx.write_set[0] == tx.write_set[1])
        return abort_with(AbortReason::type_error);
    const Object* src = find(inputs, tx.write_set[0]);
    const Object* dst = find(inputs, tx.write_set[1]);
    if (!src || !dst) return abort_with(AbortReason::missing_object);
    const Coin* sc = std::get_if<Coin>(&src->payload);
    const Coin* dc = std::get_if<Coin>(&dst->payload);
    if (!sc || !dc) return abort_with(AbortReason::type_error);
    uint64_t amount = tx.entry.arg;
    if (sc->balance < amount) return abort_with(AbortReason::underflow);
    VmResult res;
    Object s = bump(*src);
    std::get<Coin>(s.payload).balance = sc->balance - amount;
    Object d = bump(*dst);
    std::get<Coin>(d.payload).balance = dc->balance + amount;
    res.mutated.push_back(std::move(s));
    res.mutated.push_back(std::move(d));
    return res;
}

VmResult run_merge_and_fib(const Transaction& tx, const InputMap& inputs) {
    if (tx.write_set.size() != 2 || tx.write_set[0] == tx.write_set[1])
        return abort_with(AbortReason::type_error);
    const Object* src = find(inputs, tx.write_set[0]);
    const Object* dst = find(inputs, tx.write_set[1]);
    if (!src || !dst) return abort_with(AbortReason::missing_object);
    const Coin* sc = std::get_if<Coin>(&src->payload);
    const Coin* dc = std::get_if<Coin>(&dst->payload);
    if (!sc || !dc) return abort_with(AbortReason::type_error);
    sink(fib(tx.entry.arg));
    VmResult res;
    Object d = bump(*dst);
    std::get<Coin>(d.payload).balance = dc->balance + sc->balance;
    res.mutated.push_back(std::move(d));
    res.deleted.push_back(tx.write_set[0]);
    return res;
}

VmResult run_increment(const Transaction& tx, const InputMap& inputs) {
    if (tx.write_set.empty()) return abort_with(AbortReason::type_error);
    VmResult res;
    for (const auto& id : tx.write_set) {
        const Object* o = find(inputs, id);
        if (!o) return abort_with(AbortReason::missing_object);
        const Counter* c = std::get_if<Counter>(&o->payload);
        if (!c) return abort_with(AbortReason::type_error);
        Object out = bump(*o);
        std::get<Counter>(out.payload).value = c->value + 1;
        res.mutated.push_back(std::move(out));
    }
    return res;
}

VmResult run_child_access(const Transaction& tx, const InputMap& inputs) {
    if (tx.read_set.empty()) return abort_with(AbortReason::type_error);
    const Object* parent = find(inputs, tx.read_set[0]);
    if (!parent) return abort_with(AbortReason::missing_object);
    const Table* table = std::get_if<Table>(&parent->payload);
    if (!table) return abort_with(AbortReason::type_error);
    auto it = table->children.find(tx.entry.arg);
    if (it == table->children.end()) return abort_with(AbortReason::type_error);
    const ObjectId& child_id = it->second;

    const Object* child = find(inputs, child_id);
    if (!child) {
        bool declared = false;
        tx.for_each_ref([&](const ObjectId& id) { declared = declared || id == child_id; });
        if (declared) return abort_with(AbortReason::missing_object);
        VmResult res;
        res.discovered = ChildRequest{child_id, parent->id};
        return res;
    }
    if (child->owner != parent->id) return abort_with(AbortReason::ownership_violation);
    const Counter* c = std::get_if<Counter>(&child->payload);
    if (!c) return abort_with(AbortReason::type_error);
    VmResult res;
    Object out = bump(*child);
    std::get<Counter>(out.payload).value = c->value + 1;
    res.mutated.push_back(std::move(out));
    return res;
}

}  // namespace

VmResult execute(const Transaction& tx, const InputMap& inputs) {
    switch (tx.entry.kind) {
        case Entry::transfer: return run_transfer(tx, inputs);
        case Entry::merge_and_fib: return run_merge_and_fib(tx, inputs);
        case Entry::increment_counter: return run_increment(tx, inputs);
        case Entry::dynamic_child_access: return run_child_access(tx, inputs);
    }
    return abort_with(AbortReason::type_error);
}

}  // namespace shardexec::vm
