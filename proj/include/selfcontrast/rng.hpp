#pragma once

// Deterministic random-number stack. std:: distributions are
// implementation-defined, so every transform used anywhere in the project
// (uniform, normal, bounded integers, shuffles) lives here and is fully
// specified: splitmix64 for seed derivation, xoshiro256++ as the stream.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace selfcontrast {

inline constexpr uint64_t kSplitmixGamma = 0x9E3779B97F4A7C15ull;

inline constexpr uint64_t splitmix64_finalize(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline uint64_t splitmix64_next(uint64_t& state) {
    state += kSplitmixGamma;
    return splitmix64_finalize(state);
}

/// k-th output (0-based) of the splitmix64 stream seeded with `root`, in
/// O(1). Stage seeds, per-prompt seeds, and per-trial simulation seeds are
/// all derived through this one scheme.
inline constexpr uint64_t derive_seed(uint64_t root, uint64_t k) {
    return splitmix64_finalize(root + (k + 1) * kSplitmixGamma);
}

/// xoshiro256++ seeded via splitmix64. Deterministic across platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t st = seed;
        for (auto& word : state_) word = splitmix64_next(st);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl_(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl_(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Marsaglia polar; the spare is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    /// Unbiased integer in [0, n). Lemire's multiply-with-rejection.
    uint64_t below(uint64_t n) {
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        auto lo = static_cast<uint64_t>(m);
        if (lo < n) {
            const uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                m = static_cast<__uint128_t>(next_u64()) * n;
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static constexpr uint64_t rotl_(uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<uint64_t, 4> state_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace selfcontrast
