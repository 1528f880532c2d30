#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace tsda {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_str(std::string_view s) {
    // FNV-1a
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

// Deterministic generator with hand-pinned distributions. Every stochastic
// consumer (init, batching, few-shot draws, ...) owns its own stream derived
// from (seed, tag), so skipping one consumer never shifts another.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0xa02bdbf7bb3c0a7ull)) {}

    static Rng stream(std::uint64_t seed, std::string_view tag) {
        return Rng(splitmix64(seed) ^ hash_str(tag));
    }
    static Rng stream(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
        return Rng(splitmix64(splitmix64(seed) ^ hash_str(tag)) ^ splitmix64(index + 1));
    }

    std::uint64_t next_u64() {
        state_ = splitmix64(state_);
        return state_;
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // log-uniform over [lo, hi], lo > 0
    double log_uniform(double lo, double hi) {
        return std::exp(uniform(std::log(lo), std::log(hi)));
    }

    // [0, n)
    std::uint64_t below(std::uint64_t n) {
        // rejection-free modulo bias is negligible for n << 2^64; keep it exact anyway
        std::uint64_t threshold = (0ull - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    double normal() {
        // Box-Muller, one value per draw (the spare is discarded to keep the
        // stream position independent of call parity)
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            std::uint64_t j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace tsda
