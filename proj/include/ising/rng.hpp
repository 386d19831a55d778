#pragma once

#include <cstdint>

namespace ising {

// Counter-based generator: every draw is a pure function of
// (seed, chain, sweep, index), so coupled chains and replicas replay bit-exactly.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t chain, std::uint64_t sweep,
                                  std::uint64_t index) {
    std::uint64_t h = mix64(seed ^ 0x5851f42d4c957f2dull);
    h = mix64(h ^ chain);
    h = mix64(h ^ (sweep * 0xd1342543de82ef95ull));
    return mix64(h ^ (index + 0x2545f4914f6cdd1dull));
}

inline double to_unit(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

inline double counter_uniform(std::uint64_t seed, std::uint64_t chain, std::uint64_t sweep,
                              std::uint64_t index) {
    return to_unit(counter_hash(seed, chain, sweep, index));
}

// Sequential view over one (seed, chain) stream; sweep selects a sub-stream.
class Stream {
public:
    Stream(std::uint64_t seed, std::uint64_t chain, std::uint64_t sweep = 0)
        : seed_(seed), chain_(chain), sweep_(sweep) {}

    void set_sweep(std::uint64_t s) {
        sweep_ = s;
        counter_ = 0;
    }
    std::uint64_t sweep() const { return sweep_; }
    std::uint64_t next_u64() { return counter_hash(seed_, chain_, sweep_, counter_++); }
    double uniform() { return to_unit(next_u64()); }
    bool coin() { return (next_u64() >> 63) != 0; }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

private:
    std::uint64_t seed_, chain_, sweep_;
    std::uint64_t counter_ = 0;
};

}  // namespace ising
