#pragma once

#include <cstdint>
#include <functional>

#include "shardexec/message.hpp"

namespace shardexec {

// Message fabric seen by a worker. Two implementations: the deterministic
// single-threaded simulator and the socket transport. Both deliver reliably
// and in FIFO order per (src, dst) channel between live endpoints; workers
// never observe which one they run on.
class Net {
  public:
    virtual ~Net() = default;

    virtual void send(const WorkerId& src, const WorkerId& dst, Message m) = 0;

    // Self-addressed TimerMsg{token} after delay time units. Lost if the
    // worker crashes before it fires.
    virtual void timer(const WorkerId& w, uint64_t delay, uint64_t token) = 0;

    // Simulator: virtual time. Sockets: monotonic microseconds.
    virtual uint64_t now() const = 0;
};

using Handler = std::function<void(const Envelope&)>;

}  // namespace shardexec
