#pragma once

#include <cstdint>

namespace bridgegen {

// PCG32 (O'Neill). Hand-rolled so that streams are reproducible across
// compilers and standard libraries; std:: distributions are not.
class Pcg32 {
public:
    Pcg32() : Pcg32(0x853c49e6748fea9bULL) {}
    explicit Pcg32(uint64_t seed, uint64_t stream = 1) { reseed(seed, stream); }

    void reseed(uint64_t seed, uint64_t stream = 1) {
        state_ = 0;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // 53-bit uniform in [0, 1)
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // inclusive bounds; bias is negligible for the small ranges used here
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_unit() * static_cast<double>(hi - lo + 1));
    }

    bool bernoulli(double p) { return next_unit() < p; }

    uint64_t state() const { return state_; }
    uint64_t inc() const { return inc_; }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 0;
};

// splitmix64 step, used to fold several seed components into one value
inline uint64_t seed_mix(uint64_t h, uint64_t v) {
    uint64_t z = h + 0x9e3779b97f4a7c15ULL + v;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace bridgegen
