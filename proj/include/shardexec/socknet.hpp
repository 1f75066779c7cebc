#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <queue>
#include <string>
#include <vector>

#include "shardexec/message.hpp"
#include "shardexec/net.hpp"

namespace shardexec {

// Net over loopback/LAN TCP, one event loop per process. Frames wrap the
// shared codec payload in a fixed header; per-channel sequence numbers drop
// duplicates across reconnects. Single-threaded: sockets, timers and handler
// dispatch all run inside poll_once, so handlers never race.
//
// Frame layout: u32 length of the rest, then u32 source key, u32 destination
// key, u64 sequence number, encoded message (payload + type tag).
class SockNet : public Net {
public:
    struct Peer {
        WorkerId id;
        std::string host;
        uint16_t port = 0;
    };

    SockNet(const WorkerId& self, const std::vector<Peer>& peers);
    ~SockNet() override;

    SockNet(const SockNet&) = delete;
    SockNet& operator=(const SockNet&) = delete;

    void attach(const WorkerId& w, Handler h);

    void send(const WorkerId& src, const WorkerId& dst, Message m) override;
    void timer(const WorkerId& w, uint64_t delay, uint64_t token) override;
    uint64_t now() const override;

    // Pumps I/O and timers until stop() returns true; throws scenario_timeout
    // past the deadline (0 disables it). Worker exceptions propagate.
    void run_until(const std::function<bool()>& stop, uint64_t deadline_us = 0);
    void poll_once(uint64_t max_wait_us);
    void close_all();

    uint16_t own_port() const { return own_port_; }

private:
    struct Conn {
        int fd = -1;
        bool connected = false;  // outbound: connect() has completed
        std::vector<uint8_t> in;
        std::vector<uint8_t> out;
        uint64_t retry_at = 0;  // outbound: earliest reconnect attempt
        uint32_t dst_key = 0;   // outbound only
    };
    struct Tm {
        uint64_t at;
        uint64_t token;
        WorkerId w;
        bool operator>(const Tm& o) const { return at > o.at; }
    };

    void open_listener(uint16_t port);
    Conn& outbound(uint32_t dst_key);
    void start_connect(Conn& c);
    void fail_conn(Conn& c);
    void flush(Conn& c);
    void drain_frames(Conn& c);
    void pump_timers_and_inbox();

    WorkerId self_;
    uint16_t own_port_ = 0;
    std::map<uint32_t, Peer> peers_;
    std::map<uint32_t, Handler> local_;
    int listen_fd_ = -1;
    std::map<uint32_t, Conn> out_;
    std::vector<Conn> in_;
    std::map<uint64_t, uint64_t> last_seq_;  // src<<32|dst -> last delivered
    std::map<uint64_t, uint64_t> next_seq_;  // src<<32|dst -> next to assign
    std::priority_queue<Tm, std::vector<Tm>, std::greater<Tm>> timers_;
    std::vector<Envelope> inbox_;  // sends between workers attached here
    std::chrono::steady_clock::time_point epoch_;
};

}  // namespace shardexec
