#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace dropsplat {

// Deterministic random source. The engine (mt19937_64) is fully specified by
// the standard and all distribution code lives here, so sequences are
// reproducible across platforms and standard library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t raw() { return eng_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, bound). Rejection sampling keeps the result
    // exactly uniform for any bound.
    uint64_t uniform_int(uint64_t bound) {
        if (bound == 0) throw std::invalid_argument("uniform_int: bound must be positive");
        uint64_t threshold = (-bound) % bound;
        for (;;) {
            uint64_t x = eng_();
            __uint128_t m = static_cast<__uint128_t>(x) * bound;
            if (static_cast<uint64_t>(m) >= threshold) return static_cast<uint64_t>(m >> 64);
        }
    }

    // Standard normal via Box-Muller; the second draw of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // k distinct values from [0, n), uniform over subsets, via partial
    // Fisher-Yates. Consumes no draws when k == 0.
    std::vector<uint32_t> sample_without_replacement(uint32_t n, uint32_t k) {
        if (k > n) throw std::invalid_argument("sample_without_replacement: k exceeds n");
        if (k == 0) return {};
        std::vector<uint32_t> idx(n);
        for (uint32_t i = 0; i < n; ++i) idx[i] = i;
        for (uint32_t i = 0; i < k; ++i) {
            uint32_t j = i + static_cast<uint32_t>(uniform_int(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}
}  // namespace detail

// Independent stream derived from a root seed and a stream name. Streams with
// different names never share state; the same (seed, name) pair always yields
// the same sequence.
inline Rng make_stream(uint64_t root_seed, std::string_view name) {
    return Rng(detail::splitmix64(detail::splitmix64(root_seed) ^ detail::fnv1a(name)));
}

}  // namespace dropsplat
