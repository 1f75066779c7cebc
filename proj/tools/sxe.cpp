// Command-line driver. Verbs:
//   run       execute a workload end to end (simulator or sockets) and report
//   simulate  simulator run, fault schedule honored
//   oracle    sequential reference execution of the same workload
//   check     run it both ways and diff the outcomes
//   bench-vm  time the bare sequential loop, the single-threaded baseline
// plus the hidden `worker` verb hosting one worker inside a spawned process
// for socket runs.
//
// Configuration comes from an optional JSON file (--config); every flag
// overrides its counterpart in the file. Socket children are handed the
// resolved file the coordinator wrote for them, so coordinator and children
// regenerate the identical workload from the seed instead of shipping it.

#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "shardexec/engine.hpp"
#include "shardexec/socknet.hpp"
#include "shardexec/workload.hpp"

using namespace shardexec;
using nlohmann::json;

namespace {

struct FaultEvent {
    uint64_t time_us = 0;
    WorkerId worker;
    bool up = false;
};

struct ToolConfig {
    EngineConfig cfg;

    uint64_t latency_seed = 1;
    uint64_t min_latency = 100;
    uint64_t max_latency = 1000;
    uint64_t pace_us = 2000;
    uint64_t budget_us = 600'000'000;

    std::string workload = "transfers";  // transfers | merge_fib | counters | mixed
    uint64_t wl_seed = 1;
    uint32_t txs = 1000;
    uint32_t batch = 50;
    uint64_t fib_arg = 5000;
    uint32_t txs_per_counter = 10;
    double phantom = 0.0;

    std::string transport = "sim";  // sim | socket
    std::vector<FaultEvent> faults;
    std::string dir;
    std::string metrics_out;
    std::string data_out;
};

Mode mode_from(const std::string& s) {
    Mode m;
    if (!parse_mode(s.c_str(), m)) throw std::runtime_error("unknown mode: " + s);
    return m;
}

std::optional<WorkerId> parse_worker(const std::string& s) {
    if (s == "P") return WorkerId::make_primary();
    unsigned a = 0, b = 0;
    if (std::sscanf(s.c_str(), "E(%u,%u)", &a, &b) == 2)
        return WorkerId::make_execution(uint16_t(a), uint16_t(b));
    if (std::sscanf(s.c_str(), "S%u", &a) == 1) return WorkerId::make_sequencer(uint16_t(a));
    return std::nullopt;
}

json load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    return json::parse(f);
}

void apply_faults(ToolConfig& tc, const json& arr) {
    for (const auto& e : arr) {
        FaultEvent f;
        f.time_us = e.at("time_us").get<uint64_t>();
        auto w = parse_worker(e.at("worker").get<std::string>());
        if (!w) throw std::runtime_error("bad worker name in fault schedule");
        f.worker = *w;
        f.up = e.at("up").get<bool>();
        tc.faults.push_back(f);
    }
}

void apply_config(ToolConfig& tc, const json& j) {
    if (j.contains("shards")) tc.cfg.n_shards = j["shards"].get<uint32_t>();
    if (j.contains("sequencers")) tc.cfg.n_sequencers = j["sequencers"].get<uint32_t>();
    if (j.contains("clusters")) tc.cfg.n_clusters = j["clusters"].get<uint32_t>();
    if (j.contains("f_e")) tc.cfg.f_e = j["f_e"].get<uint32_t>();
    if (j.contains("mode")) tc.cfg.mode = mode_from(j["mode"].get<std::string>());
    if (j.contains("checkpoints")) {
        const auto& c = j["checkpoints"];
        if (c.contains("enabled")) tc.cfg.checkpoints_enabled = c["enabled"].get<bool>();
        if (c.contains("every")) tc.cfg.checkpoint_every = c["every"].get<uint64_t>();
        if (c.contains("limit")) tc.cfg.checkpoint_limit = c["limit"].get<uint32_t>();
    }
    if (j.contains("suspicion_us")) tc.cfg.suspicion_delay = j["suspicion_us"].get<uint64_t>();
    if (j.contains("recovery_retry_us"))
        tc.cfg.recovery_retry_delay = j["recovery_retry_us"].get<uint64_t>();
    if (j.contains("sync_retries")) tc.cfg.sync_retry_cap = j["sync_retries"].get<uint32_t>();
    if (j.contains("latency")) {
        const auto& l = j["latency"];
        if (l.contains("seed")) tc.latency_seed = l["seed"].get<uint64_t>();
        if (l.contains("min_us")) tc.min_latency = l["min_us"].get<uint64_t>();
        if (l.contains("max_us")) tc.max_latency = l["max_us"].get<uint64_t>();
    }
    if (j.contains("pace_us")) tc.pace_us = j["pace_us"].get<uint64_t>();
    if (j.contains("budget_us")) tc.budget_us = j["budget_us"].get<uint64_t>();
    if (j.contains("workload")) {
        const auto& w = j["workload"];
        if (w.contains("kind")) tc.workload = w["kind"].get<std::string>();
        if (w.contains("seed")) tc.wl_seed = w["seed"].get<uint64_t>();
        if (w.contains("txs")) tc.txs = w["txs"].get<uint32_t>();
        if (w.contains("batch")) tc.batch = w["batch"].get<uint32_t>();
        if (w.contains("fib_arg")) tc.fib_arg = w["fib_arg"].get<uint64_t>();
        if (w.contains("txs_per_counter")) tc.txs_per_counter = w["txs_per_counter"].get<uint32_t>();
        if (w.contains("phantom")) tc.phantom = w["phantom"].get<double>();
    }
    if (j.contains("transport")) tc.transport = j["transport"].get<std::string>();
    if (j.contains("dir")) tc.dir = j["dir"].get<std::string>();
    if (j.contains("faults")) apply_faults(tc, j["faults"]);
}

// Inverse of apply_config, minus the fault schedule: children never see
// faults, the coordinator owns the run.
json dump_config(const ToolConfig& tc) {
    return json{
        {"shards", tc.cfg.n_shards},
        {"sequencers", tc.cfg.n_sequencers},
        {"clusters", tc.cfg.n_clusters},
        {"f_e", tc.cfg.f_e},
        {"mode", mode_name(tc.cfg.mode)},
        {"checkpoints",
         {{"enabled", tc.cfg.checkpoints_enabled},
          {"every", tc.cfg.checkpoint_every},
          {"limit", tc.cfg.checkpoint_limit}}},
        {"suspicion_us", tc.cfg.suspicion_delay},
        {"recovery_retry_us", tc.cfg.recovery_retry_delay},
        {"sync_retries", tc.cfg.sync_retry_cap},
        {"latency",
         {{"seed", tc.latency_seed}, {"min_us", tc.min_latency}, {"max_us", tc.max_latency}}},
        {"pace_us", tc.pace_us},
        {"budget_us", tc.budget_us},
        {"workload",
         {{"kind", tc.workload},
          {"seed", tc.wl_seed},
          {"txs", tc.txs},
          {"batch", tc.batch},
          {"fib_arg", tc.fib_arg},
          {"txs_per_counter", tc.txs_per_counter},
          {"phantom", tc.phantom}}},
        {"transport", tc.transport},
    };
}

Workload build_workload(const ToolConfig& tc) {
    if (tc.workload == "mixed") {
        WorkloadSpec s;
        s.seed = tc.wl_seed;
        s.n_shards = tc.cfg.n_shards;
        s.n_txs = tc.txs;
        s.batch_size = tc.batch;
        s.allow_dynamic = tc.cfg.mode != Mode::base;
        s.phantom_child_fraction = tc.phantom;
        return generate_workload(s);
    }
    BenchKind k;
    if (!parse_bench(tc.workload.c_str(), k))
        throw std::runtime_error("unknown workload: " + tc.workload);
    BenchSpec b;
    b.kind = k;
    b.seed = tc.wl_seed;
    b.n_shards = tc.cfg.n_shards;
    b.n_txs = tc.txs;
    b.batch_size = tc.batch;
    b.fib_arg = tc.fib_arg;
    b.txs_per_counter = tc.txs_per_counter;
    return generate_bench(b);
}

// ---------------------------------------------------------------- outcomes

struct TxTimes {
    uint64_t submit = 0;
    uint64_t done = 0;
};

struct RunOutcome {
    Digest digest{};  // whole-state digest (sim) or hash of shard digests (socket)
    bool whole_state = false;
    std::vector<Digest> shard_digests;  // socket runs only
    std::map<uint64_t, bool> abort_flags;  // sim runs only
    uint64_t total = 0;
    uint64_t aborted = 0;
    std::vector<TxTimes> per_tx;  // 1-based
};

struct Stats {
    uint64_t duration_us = 0;
    double tps = 0, mean_us = 0, p50_us = 0, p99_us = 0;
};

Stats compute_stats(const std::vector<TxTimes>& per_tx) {
    Stats st;
    std::vector<uint64_t> lat;
    uint64_t lo = UINT64_MAX, hi = 0;
    for (size_t i = 1; i < per_tx.size(); i++) {
        const auto& t = per_tx[i];
        if (t.submit == 0 && t.done == 0) continue;
        lo = std::min(lo, t.submit);
        hi = std::max(hi, t.done);
        lat.push_back(t.done - t.submit);
    }
    if (lat.empty()) return st;
    st.duration_us = hi - lo;
    if (st.duration_us)
        st.tps = double(lat.size()) * 1e6 / double(st.duration_us);
    std::sort(lat.begin(), lat.end());
    uint64_t sum = 0;
    for (uint64_t v : lat) sum += v;
    st.mean_us = double(sum) / double(lat.size());
    st.p50_us = double(lat[(lat.size() - 1) / 2]);
    st.p99_us = double(lat[(lat.size() - 1) * 99 / 100]);
    return st;
}

Digest digest_from_hex(const std::string& s) {
    if (s.size() != 64) throw std::runtime_error("bad digest literal");
    Digest d{};
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw std::runtime_error("bad digest literal");
    };
    for (size_t i = 0; i < 32; i++)
        d[i] = uint8_t(nib(s[2 * i]) << 4 | nib(s[2 * i + 1]));
    return d;
}

// ---------------------------------------------------------------- simulator

RunOutcome run_sim(const ToolConfig& tc, const Workload& w) {
    EngineOptions o;
    o.cfg = tc.cfg;
    o.net.latency_seed = tc.latency_seed;
    o.net.min_latency = tc.min_latency;
    o.net.max_latency = tc.max_latency;
    o.net.suspicion_delay = tc.cfg.suspicion_delay;
    o.commit_pace = tc.pace_us;
    o.run_budget = tc.budget_us;
    o.dir = tc.dir;

    Engine eng(o, w.genesis, w.batches);
    for (const auto& f : tc.faults) eng.schedule_fault(f.time_us, f.worker, f.up);
    eng.run();

    RunOutcome out;
    out.total = eng.total_txs();
    out.digest = eng.final_digest();
    out.whole_state = true;
    out.abort_flags = eng.abort_flags();
    out.aborted = eng.aborted_count();
    out.per_tx.resize(out.total + 1);
    for (uint64_t i = 1; i <= out.total; i++)
        out.per_tx[i] = {eng.submit_time(i), eng.first_done_time(i)};
    return out;
}

// ------------------------------------------------------------------ sockets
//
// The coordinator process plays the primary: it paces commit entries, serves
// replay, and collects progress reports. Every other worker lives in its own
// spawned process. Reports are ControlMsg{metrics, value=watermark}; once a
// worker has covered the whole sequence the report carries
// "<state digest hex>:<aborts applied>" and the run ends when every
// execution worker has filed one.

constexpr uint64_t kReportTok = 0x5258;  // distinct from the recovery tick's token
constexpr uint64_t kReportEvery = 20'000;

std::vector<uint16_t> probe_ports(size_t n) {
    std::vector<uint16_t> ports;
    std::vector<int> held;  // keep bound until all are distinct
    std::set<uint16_t> seen;
    while (ports.size() < n) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw std::runtime_error("socket probe failed");
        sockaddr_in a{};
        a.sin_family = AF_INET;
        a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        socklen_t len = sizeof(a);
        if (::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof(a)) != 0 ||
            ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len) != 0) {
            ::close(fd);
            throw std::runtime_error("port probe failed");
        }
        uint16_t p = ntohs(a.sin_port);
        if (seen.insert(p).second) {
            ports.push_back(p);
            held.push_back(fd);
        } else {
            ::close(fd);
        }
    }
    for (int fd : held) ::close(fd);
    return ports;
}

void write_peers(const std::filesystem::path& path, const std::vector<SockNet::Peer>& peers) {
    json arr = json::array();
    for (const auto& p : peers)
        arr.push_back({{"key", p.id.key()}, {"host", p.host}, {"port", p.port}});
    std::ofstream f(path);
    f << arr.dump(2) << "\n";
}

std::vector<SockNet::Peer> read_peers(const std::string& path) {
    std::vector<SockNet::Peer> peers;
    for (const auto& e : load_json(path))
        peers.push_back({WorkerId::from_key(e.at("key").get<uint32_t>()),
                         e.at("host").get<std::string>(),
                         e.at("port").get<uint16_t>()});
    return peers;
}

pid_t spawn_worker(uint32_t key, const std::string& peers, const std::string& conf) {
    pid_t pid = ::fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
        std::string k = std::to_string(key);
        ::execl("/proc/self/exe", "sxe", "worker", "--self", k.c_str(), "--peers", peers.c_str(),
                "--config", conf.c_str(), static_cast<char*>(nullptr));
        std::perror("exec");
        ::_exit(127);
    }
    return pid;
}

// Child side of a socket run; tc already holds the coordinator's resolved
// config (the preparse loaded it from --config).
int run_child(const ToolConfig& tc, uint32_t self_key, const std::string& peers_path) {
    WorkerId self = WorkerId::from_key(self_key);
    Workload w = build_workload(tc);
    uint64_t total = w.total_txs();
    SockNet net(self, read_peers(peers_path));
    WorkerId boss = WorkerId::make_primary();
    bool done = false;
    // If the coordinator dies without a stop, don't linger forever.
    uint64_t deadline = net.now() + 2 * tc.budget_us;

    if (self.kind == WorkerId::sequencer) {
        SequencingWorker seq(self.index, tc.cfg.n_sequencers, tc.cfg.n_shards);
        for (const auto& b : w.batches) seq.ingest_batch(b);
        net.attach(self, [&](const Envelope& env) {
            if (auto* p = std::get_if<CommitEntryMsg>(&env.msg)) {
                for (auto& [shard, m] : seq.process_commit(p->entry))
                    for (uint16_t r = 0; r < tc.cfg.n_clusters; r++)
                        net.send(self, WorkerId::make_execution(r, uint16_t(shard)), m);
                return;
            }
            if (auto* p = std::get_if<ReplayRequestMsg>(&env.msg)) {
                for (auto& m : seq.replay_for_shard(env.src.index, p->from_batch_idx))
                    net.send(self, env.src, std::move(m));
                return;
            }
            if (auto* c = std::get_if<ControlMsg>(&env.msg))
                if (c->op == ControlMsg::stop) done = true;
        });
        net.run_until([&] { return done; }, deadline);
        seq.check_dissemination();
        return 0;
    }

    if (self.kind != WorkerId::execution) throw std::runtime_error("cannot host " + self.str());
    ExecutionWorker ew(self, tc.cfg, net, {}, w.genesis);
    ew.boot_fresh();
    net.attach(self, [&](const Envelope& env) {
        if (auto* t = std::get_if<TimerMsg>(&env.msg); t && t->token == kReportTok) {
            ControlMsg m;
            m.op = ControlMsg::metrics;
            m.value = ew.watermark();
            if (ew.watermark() == total && !ew.syncing())
                m.text = hex(ew.state_digest()) + ":" + std::to_string(ew.counters().aborted);
            net.send(self, boss, m);
            net.timer(self, kReportEvery, kReportTok);
            return;
        }
        if (auto* c = std::get_if<ControlMsg>(&env.msg)) {
            if (c->op == ControlMsg::stop) done = true;
            return;
        }
        ew.handle(env);
    });
    net.timer(self, kReportEvery, kReportTok);
    net.run_until([&] { return done; }, deadline);
    return 0;
}

void kill_all(std::vector<pid_t>& pids) {
    for (pid_t p : pids)
        if (p > 0) ::kill(p, SIGKILL);
    for (pid_t& p : pids) {
        if (p > 0) ::waitpid(p, nullptr, 0);
        p = -1;
    }
}

RunOutcome run_socket(const ToolConfig& tc, const Workload& w) {
    namespace fs = std::filesystem;
    const EngineConfig& cfg = tc.cfg;

    std::vector<WorkerId> kids;
    for (uint32_t q = 0; q < cfg.n_sequencers; q++) kids.push_back(WorkerId::make_sequencer(uint16_t(q)));
    for (uint16_t r = 0; r < cfg.n_clusters; r++)
        for (uint16_t s = 0; s < cfg.n_shards; s++) kids.push_back(WorkerId::make_execution(r, s));

    auto ports = probe_ports(kids.size() + 1);
    std::vector<SockNet::Peer> peers;
    peers.push_back({WorkerId::make_primary(), "127.0.0.1", ports[0]});
    for (size_t i = 0; i < kids.size(); i++) peers.push_back({kids[i], "127.0.0.1", ports[i + 1]});

    fs::path scratch = tc.dir.empty()
                           ? fs::temp_directory_path() / ("sxe_run_" + std::to_string(::getpid()))
                           : fs::path(tc.dir);
    fs::create_directories(scratch);
    write_peers(scratch / "peers.json", peers);
    {
        std::ofstream f(scratch / "run.json");
        f << dump_config(tc).dump(2) << "\n";
    }

    // Spawn before binding our own socket so children inherit no live fds;
    // their connects retry until the coordinator is up.
    std::vector<pid_t> pids;
    for (const auto& k : kids)
        pids.push_back(spawn_worker(k.key(), (scratch / "peers.json").string(),
                                    (scratch / "run.json").string()));

    RunOutcome out;
    try {
        SockNet net(WorkerId::make_primary(), peers);
        WorkerId me = WorkerId::make_primary();

        std::vector<CommitEntry> entries;
        std::vector<uint64_t> first_idx;
        uint64_t next = 1;
        for (size_t i = 0; i < w.batches.size(); i++) {
            entries.push_back(CommitEntry{uint64_t(i), w.batches[i].id});
            first_idx.push_back(next);
            next += w.batches[i].txs.size();
        }
        uint64_t total = next - 1;

        size_t sent = 0;
        std::vector<TxTimes> per_tx(total + 1);
        uint64_t done_high = 0;
        std::map<uint32_t, std::string> finals;  // execution worker key -> digest:aborts
        size_t n_ew = size_t(cfg.n_clusters) * cfg.n_shards;

        net.attach(me, [&](const Envelope& env) {
            if (std::get_if<TimerMsg>(&env.msg)) {
                if (sent >= entries.size()) return;
                for (size_t k = 0; k < w.batches[sent].txs.size(); k++)
                    per_tx[first_idx[sent] + k].submit = net.now();
                for (uint32_t q = 0; q < cfg.n_sequencers; q++)
                    net.send(me, WorkerId::make_sequencer(uint16_t(q)), CommitEntryMsg{entries[sent]});
                sent++;
                if (sent < entries.size()) net.timer(me, tc.pace_us, 0);
                return;
            }
            if (auto* p = std::get_if<ReplayRequestMsg>(&env.msg)) {
                for (size_t i = p->from_batch_idx; i < sent; i++)
                    net.send(me, env.src, CommitEntryMsg{entries[i]});
                return;
            }
            if (auto* c = std::get_if<ControlMsg>(&env.msg)) {
                if (c->op != ControlMsg::metrics) return;
                if (c->value > done_high) {
                    for (uint64_t i = done_high + 1; i <= c->value; i++) per_tx[i].done = net.now();
                    done_high = c->value;
                }
                if (!c->text.empty()) finals[env.src.key()] = c->text;
            }
        });

        net.timer(me, 1000, 0);
        uint64_t deadline = net.now() + tc.budget_us;
        net.run_until(
            [&] {
                for (pid_t& p : pids) {
                    if (p <= 0) continue;
                    int st = 0;
                    if (::waitpid(p, &st, WNOHANG) == p)
                        throw ProtocolError(ProtocolError::Kind::bad_state,
                                            "worker process exited mid-run");
                }
                return done_high == total && finals.size() == n_ew;
            },
            deadline);

        for (const auto& k : kids) {
            ControlMsg m;
            m.op = ControlMsg::stop;
            net.send(me, k, m);
        }
        for (int i = 0; i < 20; i++) net.poll_once(10'000);  // let the stops flush
        for (pid_t& p : pids) {
            for (int spins = 0; p > 0; spins++) {
                if (::waitpid(p, nullptr, WNOHANG) == p) {
                    p = -1;
                    break;
                }
                if (spins > 200) {
                    ::kill(p, SIGKILL);
                    ::waitpid(p, nullptr, 0);
                    p = -1;
                    break;
                }
                ::usleep(10'000);
            }
        }

        // Collate: rows replicate a shard, so their digests must agree.
        out.total = total;
        out.per_tx = std::move(per_tx);
        out.shard_digests.resize(cfg.n_shards);
        bool have_aborts = false;
        for (uint16_t s = 0; s < cfg.n_shards; s++) {
            std::string agreed;
            for (uint16_t r = 0; r < cfg.n_clusters; r++) {
                const std::string& got = finals.at(WorkerId::make_execution(r, s).key());
                if (agreed.empty())
                    agreed = got;
                else if (agreed != got)
                    throw ProtocolError(ProtocolError::Kind::digest_mismatch,
                                        "rows disagree on shard " + std::to_string(s));
            }
            auto colon = agreed.find(':');
            out.shard_digests[s] = digest_from_hex(agreed.substr(0, colon));
            uint64_t aborts = std::stoull(agreed.substr(colon + 1));
            if (have_aborts && aborts != out.aborted)
                throw ProtocolError(ProtocolError::Kind::digest_mismatch,
                                    "shards disagree on the abort count");
            out.aborted = aborts;
            have_aborts = true;
        }
        Writer wr;
        for (const auto& d : out.shard_digests) wr.bytes32(d);
        out.digest = sha256(wr.bytes());
    } catch (...) {
        kill_all(pids);
        if (tc.dir.empty()) fs::remove_all(scratch);
        throw;
    }
    if (tc.dir.empty()) fs::remove_all(scratch);
    return out;
}

// -------------------------------------------------------------------- verbs

void write_metrics_files(const ToolConfig& tc, const RunOutcome& out, const Stats& st) {
    if (!tc.metrics_out.empty()) {
        std::ofstream f(tc.metrics_out);
        for (uint64_t i = 1; i <= out.total; i++) {
            const auto& t = out.per_tx[i];
            f << json{{"tx", i},
                      {"submit_us", t.submit},
                      {"done_us", t.done},
                      {"latency_us", t.done - t.submit}}
                     .dump()
              << "\n";
        }
    }
    if (!tc.data_out.empty()) {
        std::ofstream f(tc.data_out, std::ios::app);
        f << st.tps << " " << st.mean_us << "\n";
    }
}

void print_run(const ToolConfig& tc, const RunOutcome& out, const Stats& st) {
    std::printf("workload=%s txs=%llu shards=%u clusters=%u mode=%s transport=%s\n",
                tc.workload.c_str(), static_cast<unsigned long long>(out.total), tc.cfg.n_shards,
                tc.cfg.n_clusters, mode_name(tc.cfg.mode), tc.transport.c_str());
    std::printf("digest=%s%s\n", hex(out.digest).c_str(),
                out.whole_state ? "" : " (hash of shard digests)");
    std::printf("executed=%llu aborted=%llu\n",
                static_cast<unsigned long long>(out.total - out.aborted),
                static_cast<unsigned long long>(out.aborted));
    std::printf("duration_us=%llu throughput_tps=%.1f mean_latency_us=%.1f p50_us=%.1f p99_us=%.1f\n",
                static_cast<unsigned long long>(st.duration_us), st.tps, st.mean_us, st.p50_us,
                st.p99_us);
}

int do_run(const ToolConfig& tc) {
    if (tc.transport == "socket" && !tc.faults.empty())
        throw std::runtime_error("fault schedules need the simulator");
    Workload w = build_workload(tc);
    RunOutcome out = tc.transport == "socket" ? run_socket(tc, w) : run_sim(tc, w);
    Stats st = compute_stats(out.per_tx);
    print_run(tc, out, st);
    write_metrics_files(tc, out, st);
    return 0;
}

int do_oracle(const ToolConfig& tc) {
    Workload w = build_workload(tc);
    auto t0 = std::chrono::steady_clock::now();
    OracleResult ref = run_oracle(w.genesis, w.flat());
    auto us = std::chrono::duration_cast<std::chrono::microseconds>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    uint64_t aborted = 0;
    for (const auto& [idx, a] : ref.abort_flags) aborted += a ? 1 : 0;
    std::printf("workload=%s txs=%llu\n", tc.workload.c_str(),
                static_cast<unsigned long long>(w.total_txs()));
    std::printf("digest=%s\n", hex(ref.digest()).c_str());
    std::printf("executed=%llu aborted=%llu duration_us=%lld\n",
                static_cast<unsigned long long>(w.total_txs() - aborted),
                static_cast<unsigned long long>(aborted), static_cast<long long>(us));
    return 0;
}

// Same sequential loop the oracle runs, framed as the single-threaded
// baseline for scaling comparisons.
int do_bench_vm(const ToolConfig& tc) {
    Workload w = build_workload(tc);
    auto t0 = std::chrono::steady_clock::now();
    OracleResult ref = run_oracle(w.genesis, w.flat());
    auto us = std::chrono::duration_cast<std::chrono::microseconds>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    double tps = us > 0 ? double(w.total_txs()) * 1e6 / double(us) : 0;
    std::printf("vm_loop workload=%s txs=%llu duration_us=%lld throughput_tps=%.1f digest=%s\n",
                tc.workload.c_str(), static_cast<unsigned long long>(w.total_txs()),
                static_cast<long long>(us), tps, hex(ref.digest()).c_str());
    return 0;
}

int do_check(const ToolConfig& tc) {
    Workload w = build_workload(tc);
    OracleResult ref = run_oracle(w.genesis, w.flat());
    RunOutcome out = tc.transport == "socket" ? run_socket(tc, w) : run_sim(tc, w);

    bool ok = true;
    if (out.whole_state) {
        if (out.digest != ref.digest()) {
            std::printf("state digest diverged: run %s reference %s\n", hex(out.digest).c_str(),
                        hex(ref.digest()).c_str());
            ok = false;
        }
        if (out.abort_flags != ref.abort_flags) {
            std::printf("abort history diverged\n");
            ok = false;
        }
    } else {
        for (uint32_t s = 0; s < tc.cfg.n_shards; s++) {
            std::map<ObjectId, Object> slice;
            for (const auto& [id, obj] : ref.state)
                if (shard_of(id, tc.cfg.n_shards) == s) slice.emplace(id, obj);
            Digest want = digest_of_state(slice);
            if (out.shard_digests[s] != want) {
                std::printf("shard %u diverged: run %s reference %s\n", s,
                            hex(out.shard_digests[s]).c_str(), hex(want).c_str());
                ok = false;
            }
        }
        uint64_t ref_aborts = 0;
        for (const auto& [idx, a] : ref.abort_flags) ref_aborts += a ? 1 : 0;
        if (out.aborted != ref_aborts) {
            std::printf("abort count diverged: run %llu reference %llu\n",
                        static_cast<unsigned long long>(out.aborted),
                        static_cast<unsigned long long>(ref_aborts));
            ok = false;
        }
    }
    std::printf("check: %s\n", ok ? "MATCH" : "MISMATCH");
    return ok ? 0 : 1;
}

void add_common(CLI::App& c, ToolConfig& tc, std::string& cfg_path, std::string& faults_path) {
    c.add_option("--config", cfg_path, "JSON config file; flags override its values");
    c.add_option("--shards", tc.cfg.n_shards, "execution columns");
    c.add_option("--sequencers", tc.cfg.n_sequencers, "sequencing workers");
    c.add_option("--clusters", tc.cfg.n_clusters, "execution rows (2*f_e+1 for fault tolerance)");
    c.add_option("--f-e", tc.cfg.f_e, "execution worker crashes tolerated per shard");
    c.add_option_function<std::string>(
        "--mode", [&tc](const std::string& s) { tc.cfg.mode = mode_from(s); },
        "base | dynamic | split");
    c.add_flag("--checkpoints,!--no-checkpoints", tc.cfg.checkpoints_enabled,
               "checkpoint protocol on/off");
    c.add_option("--checkpoint-every", tc.cfg.checkpoint_every, "boundary spacing, tx indices");
    c.add_option("--checkpoint-limit", tc.cfg.checkpoint_limit,
                 "checkpoints held before execution pauses");
    c.add_option("--suspicion", tc.cfg.suspicion_delay, "crash to detector notice, us (sim)");
    c.add_option("--latency-seed", tc.latency_seed, "sim latency seed");
    c.add_option("--min-latency", tc.min_latency, "sim per-hop floor, us");
    c.add_option("--max-latency", tc.max_latency, "sim per-hop ceiling, us");
    c.add_option("--pace", tc.pace_us, "gap between commit entries, us");
    c.add_option("--budget", tc.budget_us, "abort the run past this horizon, us");
    c.add_option("--workload", tc.workload, "transfers | merge_fib | counters | mixed");
    c.add_option("--seed", tc.wl_seed, "workload seed");
    c.add_option("--txs", tc.txs, "transactions");
    c.add_option("--batch", tc.batch, "transactions per batch");
    c.add_option("--fib-arg", tc.fib_arg, "merge_fib: iterations burned per transaction");
    c.add_option("--txs-per-counter", tc.txs_per_counter, "counters: writers per counter");
    c.add_option("--phantom", tc.phantom, "mixed: fraction of dynamic reads at absent keys");
    c.add_option("--transport", tc.transport)->check(CLI::IsMember({"sim", "socket"}));
    c.add_option("--faults", faults_path, "JSON fault schedule file");
    c.add_option("--dir", tc.dir, "persistence root (empty: in-memory only)");
    c.add_option("--metrics-out", tc.metrics_out, "per-transaction JSON lines");
    c.add_option("--data-out", tc.data_out, "append 'tps mean_latency_us' for plotting");
}

}  // namespace

int main(int argc, char** argv) {
    ToolConfig tc;

    // Apply the config file before CLI11 runs so flags override the file.
    std::string cfg_path;
    for (int i = 1; i < argc; i++) {
        std::string_view a = argv[i];
        if (a == "--config" && i + 1 < argc)
            cfg_path = argv[i + 1];
        else if (a.rfind("--config=", 0) == 0)
            cfg_path = a.substr(9);
    }

    try {
        if (!cfg_path.empty()) apply_config(tc, load_json(cfg_path));

        CLI::App app{"driver for the sharded execution engine"};
        app.require_subcommand(1);
        std::string faults_path;

        CLI::App* run = app.add_subcommand("run", "execute a workload and report");
        add_common(*run, tc, cfg_path, faults_path);
        CLI::App* sim = app.add_subcommand("simulate", "simulator run with a fault schedule");
        add_common(*sim, tc, cfg_path, faults_path);
        CLI::App* ora = app.add_subcommand("oracle", "sequential reference execution");
        add_common(*ora, tc, cfg_path, faults_path);
        CLI::App* chk = app.add_subcommand("check", "run and diff against the reference");
        add_common(*chk, tc, cfg_path, faults_path);
        CLI::App* bvm = app.add_subcommand("bench-vm", "time the bare sequential loop");
        add_common(*bvm, tc, cfg_path, faults_path);

        uint32_t self_key = 0;
        std::string peers_path;
        CLI::App* wrk = app.add_subcommand("worker", "");
        wrk->group("");  // internal
        wrk->add_option("--self", self_key)->required();
        wrk->add_option("--peers", peers_path)->required();
        wrk->add_option("--config", cfg_path)->required();

        CLI11_PARSE(app, argc, argv);

        if (!faults_path.empty()) apply_faults(tc, load_json(faults_path));

        if (app.got_subcommand(wrk)) return run_child(tc, self_key, peers_path);
        if (app.got_subcommand(sim)) {
            ToolConfig t = tc;
            t.transport = "sim";
            return do_run(t);
        }
        if (app.got_subcommand(run)) return do_run(tc);
        if (app.got_subcommand(ora)) return do_oracle(tc);
        if (app.got_subcommand(chk)) return do_check(tc);
        if (app.got_subcommand(bvm)) return do_bench_vm(tc);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "sxe: %s\n", e.what());
        return 2;
    }
    return 0;
}
