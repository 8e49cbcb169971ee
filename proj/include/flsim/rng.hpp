#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "flsim/errors.hpp"

namespace flsim {

/// Deterministic random stream with cheap derivation of independent
/// substreams.
///
/// Every consumer of randomness receives its own stream derived from a master
/// seed plus a purpose tag and up to two indices (round, client, trial, ...).
/// Derivation depends only on the root seed, never on how much the parent
/// stream has been consumed, so parallel consumers are schedule-independent
/// and a clean run and an attacked run share the benign substreams.
///
/// All generators are implemented locally (splitmix64 core, Box-Muller,
/// Marsaglia-Tsang, Fisher-Yates) so sequences are pinned by this file alone
/// and do not depend on standard-library internals.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : root_(seed), state_(mix(seed ^ 0x5bf0'3635'dcd5'05c1ull)) {}

    uint64_t root_seed() const { return root_; }

    /// Independent substream keyed by (root seed, tag, a, b).
    RngStream derive(std::string_view tag, uint64_t a = 0, uint64_t b = 0) const {
        uint64_t h = root_;
        h = mix(h ^ fnv1a(tag));
        h = mix(h ^ (a * 0x9e37'79b9'7f4a'7c15ull + 0x2545'f491'4f6c'dd1dull));
        h = mix(h ^ (b * 0xbf58'476d'1ce4'e5b9ull + 0x94d0'49bb'1331'11ebull));
        return RngStream(h);
    }

    uint64_t next_u64() {
        state_ += 0x9e37'79b9'7f4a'7c15ull;
        return mix(state_);
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1].
    double uniform_pos() { return 1.0 - uniform(); }

    /// Standard normal via Box-Muller (one value per call).
    double normal() {
        constexpr double two_pi = 6.283185307179586476925286766559;
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Gamma(shape alpha, scale 1), Marsaglia-Tsang.
    double gamma(double alpha) {
        if (alpha <= 0.0) throw InputError("gamma: shape must be positive");
        if (alpha < 1.0) {
            const double boost = std::pow(uniform_pos(), 1.0 / alpha);
            return gamma(alpha + 1.0) * boost;
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform_pos();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
        }
    }

    /// Uniform integer in [0, n). Rejection sampling, unbiased.
    size_t uniform_index(size_t n) {
        if (n == 0) throw InputError("uniform_index: n must be positive");
        const uint64_t span = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return static_cast<size_t>(r % span);
    }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct indices drawn uniformly from [0, n), returned sorted.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
        if (k > n) throw ConfigError("sample_without_replacement: k exceeds n");
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        for (size_t i = 0; i < k; ++i) {
            const size_t j = i + uniform_index(n - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        return idx;
    }

private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58'476d'1ce4'e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d0'49bb'1331'11ebull;
        return z ^ (z >> 31);
    }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 0xcbf2'9ce4'8422'2325ull;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x0000'0100'0000'01b3ull;
        }
        return h;
    }

    uint64_t root_;
    uint64_t state_;
};

} // namespace flsim
