// Deterministic random streams. Every consumer derives its own stream from
// (seed, purpose, indices), so draws are independent of batch order, thread
// count, and resume point. No std:: distributions are used anywhere: their
// output is implementation-defined, and runs must be bit-reproducible.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace lpc {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// xoshiro256** seeded via splitmix64.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    // Child stream keyed by a purpose label and up to three indices.
    RngStream derive(std::string_view purpose, std::uint64_t a = 0,
                     std::uint64_t b = 0, std::uint64_t c = 0) const {
        std::uint64_t mix = s_[0] ^ fnv1a64(purpose);
        std::uint64_t st = mix;
        st ^= splitmix64(st) + a;
        st ^= splitmix64(st) + b;
        st ^= splitmix64(st) + c;
        return RngStream(splitmix64(st));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on the open interval (0,1).
    double next_unit_open() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
    }

    // Standard Gumbel via inverse CDF, -ln(-ln(u)), u in (0,1).
    double next_gumbel() { return -std::log(-std::log(next_unit_open())); }

    // Box-Muller, no cached spare.
    double next_gaussian() {
        const double u1 = next_unit_open();
        const double u2 = next_unit_open();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Uniform integer in [0, n), rejection-debiased.
    std::uint64_t next_below(std::uint64_t n) {
        const std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int next_int(int n) { return static_cast<int>(next_below(static_cast<std::uint64_t>(n))); }

    // Raw state for checkpointing.
    std::array<std::uint64_t, 4> state() const { return {s_[0], s_[1], s_[2], s_[3]}; }
    void set_state(const std::array<std::uint64_t, 4>& s) {
        for (int i = 0; i < 4; ++i) s_[i] = s[i];
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
};

}  // namespace lpc
