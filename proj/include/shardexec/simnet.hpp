#pragma once

#include <cstdint>
#include <map>
#include <queue>
#include <vector>

#include "shardexec/net.hpp"
#include "shardexec/rng.hpp"

namespace shardexec {

// Discrete-event simulator. Single-threaded: run() pops the earliest event
// (ties broken by insertion order) and hands it to the destination handler,
// which may send further messages re-entrantly. A whole run is a pure
// function of the latency seed, the fault schedule and the handlers'
// behavior, which is what the determinism suite leans on.
//
// Crash model: a crash discards the worker's in-flight inbound messages and
// pending timers (volatile state is the engine's problem, via the fault
// hook); messages already sent by the worker stay in the network. Sends to a
// down worker are dropped silently at delivery time. Epoch counters tie
// every queued delivery to the registration of the destination that was
// alive at send time, so nothing sent before or during an outage leaks into
// the rebooted instance.
//
// A detector notice (SuspectMsg from the harness id) reaches every other
// live worker suspicion_delay after a fault fires, for down and up alike.
class SimNet final : public Net {
  public:
    struct Options {
        uint64_t latency_seed = 0;
        uint64_t min_latency = 100;  // sim time units are microseconds
        uint64_t max_latency = 1000;
        uint64_t suspicion_delay = 200;
    };

    explicit SimNet(Options opt);

    void add_worker(const WorkerId& id, Handler on_msg);

    // Engine lifecycle callback, invoked when a scheduled fault fires:
    // up=false means tear down volatile state, up=true means reboot from
    // persisted state and rejoin.
    using FaultHook = std::function<void(const WorkerId&, bool up)>;
    void set_fault_hook(FaultHook h) { fault_hook_ = std::move(h); }

    // Observer for every delivered message, called before the handler.
    using Tracer = std::function<void(uint64_t time, const Envelope&)>;
    void set_tracer(Tracer t) { tracer_ = std::move(t); }

    void schedule_fault(uint64_t time, const WorkerId& w, bool up);

    // Multiplies the latency of every message into w; models a slow worker.
    void slow(const WorkerId& w, uint64_t factor);

    void send(const WorkerId& src, const WorkerId& dst, Message m) override;
    void timer(const WorkerId& w, uint64_t delay, uint64_t token) override;
    uint64_t now() const override { return now_; }

    // Drains the event heap. Throws scenario_timeout if virtual time would
    // pass the budget with events still pending.
    void run(uint64_t budget);

    bool is_up(const WorkerId& w) const;
    uint64_t delivered() const { return delivered_; }
    bool idle() const { return heap_.empty(); }

  private:
    struct WorkerState {
        Handler handler;
        bool up = true;
        uint64_t epoch = 0;
        uint64_t slow_factor = 1;
    };

    enum class Kind { deliver, timer, fault };

    struct Ev {
        uint64_t time;
        uint64_t seq;
        Kind kind;
        Envelope env;        // deliver
        uint64_t dst_epoch;  // deliver, timer
        bool up;             // fault
    };
    struct Later {
        bool operator()(const Ev& a, const Ev& b) const {
            return a.time != b.time ? a.time > b.time : a.seq > b.seq;
        }
    };

    WorkerState& state(const WorkerId& w);
    const WorkerState* find(const WorkerId& w) const;
    void push(uint64_t time, Kind kind, Envelope env, uint64_t dst_epoch, bool up);
    void deliver_at(uint64_t time, Envelope env);
    uint64_t draw_latency(const WorkerId& src, const WorkerId& dst);

    Options opt_;
    Rng latency_root_;
    std::map<std::pair<WorkerId, WorkerId>, Rng> channel_rng_;
    std::map<std::pair<WorkerId, WorkerId>, uint64_t> channel_floor_;  // FIFO clamp
    std::map<WorkerId, WorkerState> workers_;
    std::priority_queue<Ev, std::vector<Ev>, Later> heap_;
    uint64_t now_ = 0;
    uint64_t seq_ = 0;
    uint64_t delivered_ = 0;
    FaultHook fault_hook_;
    Tracer tracer_;
};

}  // namespace shardexec
