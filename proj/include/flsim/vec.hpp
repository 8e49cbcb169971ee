#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "flsim/errors.hpp"

namespace flsim {

// Flat parameter / update / gradient vector. Dimension is fixed per
// experiment; all arithmetic partners must agree on it.
using ParamVector = std::vector<double>;

namespace vec {

inline void check_same_dim(const ParamVector& a, const ParamVector& b, const char* where) {
    if (a.size() != b.size())
        throw InputError(std::string(where) + ": dimension mismatch (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
}

inline void check_finite(const ParamVector& v, const char* where) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(where) + ": non-finite entry");
    }
}

inline double dot(const ParamVector& a, const ParamVector& b) {
    check_same_dim(a, b, "dot");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const ParamVector& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double l2_distance_sq(const ParamVector& a, const ParamVector& b) {
    check_same_dim(a, b, "l2_distance_sq");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double l2_distance(const ParamVector& a, const ParamVector& b) {
    return std::sqrt(l2_distance_sq(a, b));
}

inline ParamVector add(const ParamVector& a, const ParamVector& b) {
    check_same_dim(a, b, "add");
    ParamVector out(a);
    for (size_t i = 0; i < b.size(); ++i) out[i] += b[i];
    return out;
}

inline ParamVector sub(const ParamVector& a, const ParamVector& b) {
    check_same_dim(a, b, "sub");
    ParamVector out(a);
    for (size_t i = 0; i < b.size(); ++i) out[i] -= b[i];
    return out;
}

inline ParamVector scaled(const ParamVector& a, double s) {
    ParamVector out(a);
    for (double& x : out) x *= s;
    return out;
}

// y += s * x
inline void axpy(ParamVector& y, double s, const ParamVector& x) {
    check_same_dim(y, x, "axpy");
    for (size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

// sign(0) = 0 throughout the library.
inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline ParamVector sign_of(const ParamVector& v) {
    ParamVector out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = sign(v[i]);
    return out;
}

inline ParamVector mean_of(std::span<const ParamVector> vs) {
    if (vs.empty()) throw InputError("mean_of: empty list");
    ParamVector out(vs[0].size(), 0.0);
    for (const auto& v : vs) {
        check_same_dim(out, v, "mean_of");
        for (size_t i = 0; i < v.size(); ++i) out[i] += v[i];
    }
    const double inv = 1.0 / static_cast<double>(vs.size());
    for (double& x : out) x *= inv;
    return out;
}

// Per-dimension population standard deviation (divide by count).
inline ParamVector stddev_of(std::span<const ParamVector> vs) {
    const ParamVector mu = mean_of(vs);
    ParamVector out(mu.size(), 0.0);
    for (const auto& v : vs) {
        for (size_t i = 0; i < v.size(); ++i) {
            const double d = v[i] - mu[i];
            out[i] += d * d;
        }
    }
    const double inv = 1.0 / static_cast<double>(vs.size());
    for (double& x : out) x = std::sqrt(x * inv);
    return out;
}

// Stable content hash, used for immutability checks.
inline uint64_t fingerprint(const ParamVector& v, uint64_t h = 0xcbf2'9ce4'8422'2325ull) {
    for (double x : v) {
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(x));
        std::memcpy(&bits, &x, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 0x0000'0100'0000'01b3ull;
        }
    }
    return h;
}

} // namespace vec
} // namespace flsim
