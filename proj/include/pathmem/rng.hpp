#pragma once

#include <cstdint>
#include <string_view>

namespace pathmem {

// splitmix64: tiny, fast, and identical on every platform. All randomness in
// the library flows through RngStream so that a single seed reproduces runs
// bit-for-bit.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(seed) {
        // Decorrelate trivially related seeds (0, 1, 2, ...).
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    std::uint64_t next_below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // Child stream, independent of the parent position: deriving twice with the
    // same label yields the same stream, and the parent is not advanced.
    RngStream derive(std::string_view label, std::uint64_t index = 0) const {
        std::uint64_t h = fnv1a64(label) ^ (0x9e3779b97f4a7c15ull * (index + 1));
        std::uint64_t s = state_ ^ h;
        RngStream child(0);
        child.state_ = splitmix64(s);
        return child;
    }

private:
    std::uint64_t state_;
};

}  // namespace pathmem
