#pragma once

#include <cstdint>

namespace shardexec {

// splitmix64. Workload generation and simulator latencies must be identical
// across platforms and standard libraries, so we do not use <random>
// distributions anywhere that affects test expectations.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, bound). Modulo bias is irrelevant at our bounds.
    uint64_t below(uint64_t bound) { return bound == 0 ? 0 : next() % bound; }

    // Uniform in [lo, hi] inclusive.
    uint64_t range(uint64_t lo, uint64_t hi) { return lo + below(hi - lo + 1); }

    double unit() { return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0); }

    // Derive an independent stream; used to give every channel/worker its own
    // deterministic sequence regardless of draw interleaving.
    Rng fork(uint64_t salt) {
        Rng r(state_ ^ (salt * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
        r.next();
        return r;
    }

private:
    uint64_t state_;
};

}  // namespace shardexec
