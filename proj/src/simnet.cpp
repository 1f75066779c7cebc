#include "shardexec/simnet.hpp"

#include "shardexec/errors.hpp"

namespace shardexec {

SimNet::SimNet(Options opt) : opt_(opt), latency_root_(opt.latency_seed) {
    if (opt_.max_latency < opt_.min_latency)
        throw ProtocolError(ProtocolError::bad_state, "latency bounds inverted");
}

void SimNet::add_worker(const WorkerId& id, Handler on_msg) {
    auto [it, fresh] = workers_.try_emplace(id);
    if (!fresh) throw ProtocolError(ProtocolError::bad_state, "worker re-registered: " + id.str());
    it->second.handler = std::move(on_msg);
}

SimNet::WorkerState& SimNet::state(const WorkerId& w) {
    auto it = workers_.find(w);
    if (it == workers_.end())
        throw ProtocolError(ProtocolError::bad_state, "unknown worker: " + w.str());
    return it->second;
}

const SimNet::WorkerState* SimNet::find(const WorkerId& w) const {
    auto it = workers_.find(w);
    return it == workers_.end() ? nullptr : &it->second;
}

bool SimNet::is_up(const WorkerId& w) const {
    const WorkerState* s = find(w);
    return s && s->up;
}

void SimNet::slow(const WorkerId& w, uint64_t factor) {
    state(w).slow_factor = factor == 0 ? 1 : factor;
}

void SimNet::push(uint64_t time, Kind kind, Envelope env, uint64_t dst_epoch, bool up) {
    heap_.push(Ev{time, seq_++, kind, std::move(env), dst_epoch, up});
}

// Channel streams fork off an unadvanced root, so which channel speaks first
// cannot shift another channel's draws.
uint64_t SimNet::draw_latency(const WorkerId& src, const WorkerId& dst) {
    auto key = std::make_pair(src, dst);
    auto it = channel_rng_.find(key);
    if (it == channel_rng_.end()) {
        uint64_t salt = (uint64_t(src.key()) << 32) | dst.key();
        it = channel_rng_.emplace(key, latency_root_.fork(salt)).first;
    }
    uint64_t lat = it->second.range(opt_.min_latency, opt_.max_latency);
    return lat * state(dst).slow_factor;
}

void SimNet::deliver_at(uint64_t time, Envelope env) {
    // FIFO per channel: a later send never overtakes, whatever it drew.
    auto key = std::make_pair(env.src, env.dst);
    uint64_t& floor = channel_floor_[key];
    if (time < floor) time = floor;
    floor = time;
    push(time, Kind::deliver, std::move(env), state(env.dst).epoch, false);
}

void SimNet::send(const WorkerId& src, const WorkerId& dst, Message m) {
    // Unregistered senders are external injectors (tests, the driver).
    if (const WorkerState* s = find(src); s && !s->up) return;
    uint64_t lat = draw_latency(src, dst);
    deliver_at(now_ + lat, Envelope{src, dst, std::move(m)});
}

void SimNet::timer(const WorkerId& w, uint64_t delay, uint64_t token) {
    WorkerState& s = state(w);
    if (!s.up) return;
    push(now_ + delay, Kind::timer, Envelope{w, w, TimerMsg{token}}, s.epoch, false);
}

void SimNet::schedule_fault(uint64_t time, const WorkerId& w, bool up) {
    push(time, Kind::fault, Envelope{w, w, TimerMsg{}}, 0, up);
}

void SimNet::run(uint64_t budget) {
    while (!heap_.empty()) {
        Ev ev = heap_.top();
        heap_.pop();
        if (ev.time > budget)
            throw ProtocolError(ProtocolError::scenario_timeout,
                                "events pending past time budget " + std::to_string(budget));
        now_ = ev.time;

        if (ev.kind == Kind::fault) {
            WorkerState& s = state(ev.env.dst);
            if (s.up == ev.up) continue;  // duplicate schedule
            s.up = ev.up;
            s.epoch++;
            if (fault_hook_) fault_hook_(ev.env.dst, ev.up);
            // Detector notice to everyone else.
            for (auto& [id, ws] : workers_) {
                if (id == ev.env.dst || !ws.up) continue;
                push(now_ + opt_.suspicion_delay, Kind::deliver,
                     Envelope{WorkerId::make_harness(), id, SuspectMsg{ev.env.dst, ev.up}},
                     ws.epoch, false);
            }
            // A returning worker gets the current down-set, so it never waits
            // on a peer that crashed while it was gone.
            if (ev.up) {
                WorkerState& back = state(ev.env.dst);
                for (auto& [id, ws] : workers_) {
                    if (ws.up) continue;
                    push(now_ + opt_.suspicion_delay, Kind::deliver,
                         Envelope{WorkerId::make_harness(), ev.env.dst, SuspectMsg{id, false}},
                         back.epoch, false);
                }
            }
            continue;
        }

        WorkerState& s = state(ev.env.dst);
        if (!s.up || s.epoch != ev.dst_epoch) continue;  // lost to a crash
        delivered_++;
        if (tracer_) tracer_(now_, ev.env);
        s.handler(ev.env);
    }
}

}  // namespace shardexec
