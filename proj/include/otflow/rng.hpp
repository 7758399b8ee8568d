#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace otflow {

// Philox4x32-10 counter-based generator (Salmon et al., "Parallel random
// numbers: as easy as 1, 2, 3"). Every draw is a pure function of
// (key, counter), so independent substreams are cheap: the key is derived
// from a user seed plus a stream label, and the counter just increments.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::string_view stream = "")
        : seed_(seed), stream_(stream) {
        const std::uint64_t key = mix64(mix64(seed + 0x9E3779B97F4A7C15ull) ^ fnv1a64(stream));
        key0_ = static_cast<std::uint32_t>(key);
        key1_ = static_cast<std::uint32_t>(key >> 32);
    }

    static constexpr const char* name() { return "philox4x32-10"; }

    std::uint64_t seed() const { return seed_; }
    const std::string& stream() const { return stream_; }

    std::uint32_t next_u32() {
        if (buf_pos_ == 4) {
            block(counter_++, key0_, key1_, buf_);
            buf_pos_ = 0;
        }
        return buf_[buf_pos_++];
    }

    std::uint64_t next_u64() {
        const std::uint64_t lo = next_u32();
        const std::uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]; safe as a log() argument.
    double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    // Standard normal via Box-Muller (cosine branch only, so every draw
    // consumes exactly two uniforms and streams stay aligned).
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Raw Philox block, exposed for known-answer tests.
    static void block(std::uint64_t counter, std::uint32_t key0, std::uint32_t key1,
                      std::array<std::uint32_t, 4>& out) {
        std::uint32_t x0 = static_cast<std::uint32_t>(counter);
        std::uint32_t x1 = static_cast<std::uint32_t>(counter >> 32);
        std::uint32_t x2 = 0;
        std::uint32_t x3 = 0;
        round10(x0, x1, x2, x3, key0, key1);
        out = {x0, x1, x2, x3};
    }

    static void block_raw(std::array<std::uint32_t, 4> ctr, std::uint32_t key0, std::uint32_t key1,
                          std::array<std::uint32_t, 4>& out) {
        round10(ctr[0], ctr[1], ctr[2], ctr[3], key0, key1);
        out = ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static void round10(std::uint32_t& x0, std::uint32_t& x1, std::uint32_t& x2, std::uint32_t& x3,
                        std::uint32_t k0, std::uint32_t k1) {
        for (int r = 0; r < 10; ++r) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * x0;
            const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * x2;
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            const std::uint32_t y0 = hi1 ^ x1 ^ k0;
            const std::uint32_t y1 = lo1;
            const std::uint32_t y2 = hi0 ^ x3 ^ k1;
            const std::uint32_t y3 = lo0;
            x0 = y0;
            x1 = y1;
            x2 = y2;
            x3 = y3;
            k0 += kWeyl0;
            k1 += kWeyl1;
        }
    }

    static std::uint64_t mix64(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    static std::uint64_t fnv1a64(std::string_view s) {
        std::uint64_t h = 0xCBF29CE484222325ull;
        for (const char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ull;
        }
        return h;
    }

    std::uint64_t seed_;
    std::string stream_;
    std::uint32_t key0_ = 0;
    std::uint32_t key1_ = 0;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    int buf_pos_ = 4;
};

}  // namespace otflow
