#include "shardexec/socknet.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include "shardexec/bytes.hpp"
#include "shardexec/errors.hpp"

namespace shardexec {

namespace {

void set_nonblocking(int fd) {
    int fl = fcntl(fd, F_GETFL, 0);
    fcntl(fd, F_SETFL, fl | O_NONBLOCK);
}

uint64_t channel_key(uint32_t src, uint32_t dst) {
    return uint64_t(src) << 32 | dst;
}

}  // namespace

SockNet::SockNet(const WorkerId& self, const std::vector<Peer>& peers)
    : self_(self), epoch_(std::chrono::steady_clock::now()) {
    for (const auto& p : peers) peers_[p.id.key()] = p;
    auto it = peers_.find(self.key());
    if (it == peers_.end())
        throw ProtocolError(ProtocolError::Kind::bad_state,
                            "own id " + self.str() + " missing from the peer table");
    open_listener(it->second.port);
    own_port_ = it->second.port;
}

SockNet::~SockNet() {
    close_all();
}

void SockNet::close_all() {
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
    for (auto& [k, c] : out_)
        if (c.fd >= 0) ::close(c.fd);
    out_.clear();
    for (auto& c : in_)
        if (c.fd >= 0) ::close(c.fd);
    in_.clear();
}

void SockNet::open_listener(uint16_t port) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0)
        throw ProtocolError(ProtocolError::Kind::bad_state, "socket: " + std::string(strerror(errno)));
    int one = 1;
    setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0)
        throw ProtocolError(ProtocolError::Kind::bad_state,
                            "bind " + std::to_string(port) + ": " + strerror(errno));
    if (listen(listen_fd_, 64) < 0)
        throw ProtocolError(ProtocolError::Kind::bad_state, "listen: " + std::string(strerror(errno)));
    set_nonblocking(listen_fd_);
}

void SockNet::attach(const WorkerId& w, Handler h) {
    local_[w.key()] = std::move(h);
}

uint64_t SockNet::now() const {
    return uint64_t(std::chrono::duration_cast<std::chrono::microseconds>(
                        std::chrono::steady_clock::now() - epoch_)
                        .count());
}

void SockNet::timer(const WorkerId& w, uint64_t delay, uint64_t token) {
    timers_.push(Tm{now() + delay, token, w});
}

void SockNet::send(const WorkerId& src, const WorkerId& dst, Message m) {
    if (local_.contains(dst.key())) {
        inbox_.push_back(Envelope{src, dst, std::move(m)});
        return;
    }
    if (!peers_.contains(dst.key()))
        throw ProtocolError(ProtocolError::Kind::bad_state,
                            "no endpoint for " + dst.str());
    uint64_t seq = next_seq_[channel_key(src.key(), dst.key())]++;
    Writer w;
    w.u32(src.key());
    w.u32(dst.key());
    w.u64(seq);
    w.raw(encode_message(m));
    Conn& c = outbound(dst.key());
    Writer framed;
    framed.u32(uint32_t(w.size()));
    framed.raw(w.bytes());
    const auto& bytes = framed.bytes();
    c.out.insert(c.out.end(), bytes.begin(), bytes.end());
    if (c.connected) flush(c);
}

SockNet::Conn& SockNet::outbound(uint32_t dst_key) {
    Conn& c = out_[dst_key];
    c.dst_key = dst_key;
    if (c.fd < 0 && now() >= c.retry_at) start_connect(c);
    return c;
}

void SockNet::start_connect(Conn& c) {
    const Peer& p = peers_.at(c.dst_key);
    c.fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (c.fd < 0) {
        fail_conn(c);
        return;
    }
    set_nonblocking(c.fd);
    int one = 1;
    setsockopt(c.fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(p.port);
    inet_pton(AF_INET, p.host.c_str(), &addr.sin_addr);
    int r = ::connect(c.fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    if (r == 0) {
        c.connected = true;
        flush(c);
    } else if (errno != EINPROGRESS) {
        fail_conn(c);
    }
}

void SockNet::fail_conn(Conn& c) {
    if (c.fd >= 0) ::close(c.fd);
    c.fd = -1;
    c.connected = false;
    c.retry_at = now() + 10'000;  // outgoing frames wait in c.out meanwhile
}

void SockNet::flush(Conn& c) {
    while (!c.out.empty()) {
        ssize_t n = ::send(c.fd, c.out.data(), c.out.size(), MSG_NOSIGNAL);
        if (n > 0) {
            c.out.erase(c.out.begin(), c.out.begin() + n);
            continue;
        }
        if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return;
        if (n < 0 && errno == EINTR) continue;
        fail_conn(c);
        return;
    }
}

void SockNet::drain_frames(Conn& c) {
    size_t pos = 0;
    while (c.in.size() - pos >= 4) {
        Reader hdr(std::span<const uint8_t>(c.in.data() + pos, 4));
        uint32_t len = hdr.u32();
        if (len < 16) throw CodecError("runt frame");
        if (c.in.size() - pos < 4 + size_t(len)) break;
        const uint8_t* body = c.in.data() + pos + 4;
        pos += 4 + len;

        Reader r(std::span<const uint8_t>(body, 16));
        uint32_t src_key = r.u32();
        uint32_t dst_key = r.u32();
        uint64_t seq = r.u64();

        // The channel entry holds the next expected sequence number; anything
        // below it is a replay from before a reconnect.
        uint64_t& next_in = last_seq_[channel_key(src_key, dst_key)];
        if (seq < next_in) continue;
        next_in = seq + 1;

        auto lit = local_.find(dst_key);
        if (lit == local_.end())
            throw ProtocolError(ProtocolError::Kind::bad_state,
                                "frame for a worker not hosted here");
        Envelope env;
        env.src = WorkerId::from_key(src_key);
        env.dst = WorkerId::from_key(dst_key);
        env.msg = decode_message(std::span<const uint8_t>(body + 16, len - 16));
        lit->second(env);
    }
    c.in.erase(c.in.begin(), c.in.begin() + long(pos));
}

void SockNet::pump_timers_and_inbox() {
    while (!timers_.empty() && timers_.top().at <= now()) {
        Tm t = timers_.top();
        timers_.pop();
        auto it = local_.find(t.w.key());
        if (it == local_.end()) continue;
        it->second(Envelope{t.w, t.w, TimerMsg{t.token}});
    }
    while (!inbox_.empty()) {
        std::vector<Envelope> batch;
        batch.swap(inbox_);
        for (auto& env : batch) {
            auto it = local_.find(env.dst.key());
            if (it != local_.end()) it->second(env);
        }
    }
}

void SockNet::poll_once(uint64_t max_wait_us) {
    uint64_t wait = max_wait_us;
    if (!timers_.empty()) {
        uint64_t t = now();
        uint64_t next = timers_.top().at;
        wait = next <= t ? 0 : std::min(wait, next - t);
    }
    if (!inbox_.empty()) wait = 0;

    // Retry pending outbound connects whose backoff has expired.
    for (auto& [k, c] : out_)
        if (c.fd < 0 && !c.out.empty() && now() >= c.retry_at) {
            start_connect(c);
            if (c.fd >= 0) wait = std::min<uint64_t>(wait, 10'000);
        } else if (c.fd < 0 && !c.out.empty()) {
            wait = std::min<uint64_t>(wait, 10'000);
        }

    std::vector<pollfd> fds;
    std::vector<Conn*> conns;
    fds.push_back(pollfd{listen_fd_, POLLIN, 0});
    conns.push_back(nullptr);
    for (auto& [k, c] : out_)
        if (c.fd >= 0) {
            short ev = POLLIN;
            if (!c.connected || !c.out.empty()) ev |= POLLOUT;
            fds.push_back(pollfd{c.fd, ev, 0});
            conns.push_back(&c);
        }
    for (auto& c : in_)
        if (c.fd >= 0) {
            fds.push_back(pollfd{c.fd, POLLIN, 0});
            conns.push_back(&c);
        }

    int rc = ::poll(fds.data(), nfds_t(fds.size()), int(wait / 1000));
    if (rc < 0 && errno != EINTR)
        throw ProtocolError(ProtocolError::Kind::bad_state, "poll: " + std::string(strerror(errno)));

    if (rc > 0) {
        if (fds[0].revents & POLLIN) {
            for (;;) {
                int fd = ::accept(listen_fd_, nullptr, nullptr);
                if (fd < 0) break;
                set_nonblocking(fd);
                int one = 1;
                setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                Conn c;
                c.fd = fd;
                c.connected = true;
                in_.push_back(std::move(c));
            }
        }
        for (size_t i = 1; i < fds.size(); i++) {
            Conn& c = *conns[i];
            if (c.fd < 0) continue;
            if (fds[i].revents & POLLOUT) {
                if (!c.connected) {
                    int err = 0;
                    socklen_t len = sizeof err;
                    getsockopt(c.fd, SOL_SOCKET, SO_ERROR, &err, &len);
                    if (err != 0) {
                        fail_conn(c);
                        continue;
                    }
                    c.connected = true;
                }
                flush(c);
            }
            if (c.fd >= 0 && (fds[i].revents & (POLLIN | POLLHUP | POLLERR))) {
                uint8_t buf[64 * 1024];
                for (;;) {
                    ssize_t n = ::recv(c.fd, buf, sizeof buf, 0);
                    if (n > 0) {
                        c.in.insert(c.in.end(), buf, buf + n);
                        continue;
                    }
                    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) break;
                    if (n < 0 && errno == EINTR) continue;
                    fail_conn(c);  // peer closed; outbound side will redial
                    break;
                }
                if (!c.in.empty()) drain_frames(c);
            }
        }
        in_.erase(std::remove_if(in_.begin(), in_.end(),
                                 [](const Conn& c) { return c.fd < 0 && c.in.empty(); }),
                  in_.end());
    }
    pump_timers_and_inbox();
}

void SockNet::run_until(const std::function<bool()>& stop, uint64_t deadline_us) {
    while (!stop()) {
        if (deadline_us != 0 && now() > deadline_us)
            throw ProtocolError(ProtocolError::Kind::scenario_timeout,
                                "socket run exceeded its deadline");
        poll_once(50'000);
    }
}

}  // namespace shardexec
