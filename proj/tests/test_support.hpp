#pragma once

// Shared test helpers: independent oracles kept deliberately separate from
// the library implementations they check.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "flsim/aggregation.hpp"
#include "flsim/data.hpp"
#include "flsim/model.hpp"
#include "flsim/rng.hpp"

namespace testsup {

// Central finite-difference gradient of the mean cross-entropy loss.
inline flsim::ParamVector fd_gradient(const flsim::ModelSpec& spec,
                                      const flsim::ParamVector& params,
                                      std::span<const flsim::LabeledExample> batch,
                                      double step = 1e-5) {
    flsim::ParamVector grad(params.size());
    flsim::ParamVector work = params;
    for (size_t i = 0; i < params.size(); ++i) {
        work[i] = params[i] + step;
        const double up = flsim::loss_only(spec, work, batch);
        work[i] = params[i] - step;
        const double down = flsim::loss_only(spec, work, batch);
        work[i] = params[i];
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

inline double max_abs_diff(const flsim::ParamVector& a, const flsim::ParamVector& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// ---- brute-force aggregation oracles -------------------------------------

inline std::vector<double> oracle_mean(const std::vector<std::vector<double>>& ups) {
    std::vector<double> out(ups[0].size(), 0.0);
    for (const auto& u : ups)
        for (size_t j = 0; j < u.size(); ++j) out[j] += u[j];
    for (double& x : out) x /= static_cast<double>(ups.size());
    return out;
}

inline std::vector<double> oracle_norm_bound(const std::vector<std::vector<double>>& ups,
                                             double tau) {
    std::vector<std::vector<double>> scaled = ups;
    for (auto& u : scaled) {
        double sq = 0.0;
        for (double x : u) sq += x * x;
        const double norm = std::sqrt(sq);
        if (norm > tau)
            for (double& x : u) x *= tau / norm;
    }
    return oracle_mean(scaled);
}

inline std::vector<double> oracle_trimmed_mean(const std::vector<std::vector<double>>& ups,
                                               size_t m) {
    const size_t n = ups.size(), d = ups[0].size();
    std::vector<double> out(d);
    for (size_t j = 0; j < d; ++j) {
        std::vector<double> col;
        for (size_t i = 0; i < n; ++i) col.push_back(ups[i][j]);
        std::sort(col.begin(), col.end());
        double s = 0.0;
        for (size_t i = m; i < n - m; ++i) s += col[i];
        out[j] = s / static_cast<double>(n - 2 * m);
    }
    return out;
}

inline std::vector<double> oracle_median(const std::vector<std::vector<double>>& ups) {
    const size_t n = ups.size(), d = ups[0].size();
    std::vector<double> out(d);
    for (size_t j = 0; j < d; ++j) {
        std::vector<double> col;
        for (size_t i = 0; i < n; ++i) col.push_back(ups[i][j]);
        std::sort(col.begin(), col.end());
        out[j] = n % 2 == 1 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
    }
    return out;
}

inline double oracle_sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

// Krum score over a subset of indices, recomputed from the full pairwise
// distance matrix.
inline std::vector<double> oracle_krum_scores(const std::vector<std::vector<double>>& ups,
                                              const std::vector<size_t>& subset, size_t m) {
    const size_t n = subset.size();
    const size_t k = n - m - 2;
    std::vector<double> scores(n);
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> d;
        for (size_t j = 0; j < n; ++j)
            if (j != i) d.push_back(oracle_sq_dist(ups[subset[i]], ups[subset[j]]));
        std::sort(d.begin(), d.end());
        scores[i] = std::accumulate(d.begin(), d.begin() + static_cast<long>(k), 0.0);
    }
    return scores;
}

struct OracleMkrum {
    std::vector<size_t> selected;
    std::vector<double> aggregate;
};

inline OracleMkrum oracle_multi_krum(const std::vector<std::vector<double>>& ups, size_t m,
                                     size_t c) {
    std::vector<size_t> remaining(ups.size());
    std::iota(remaining.begin(), remaining.end(), size_t{0});
    OracleMkrum out;
    while (out.selected.size() < c) {
        const auto scores = oracle_krum_scores(ups, remaining, m);
        size_t best = 0;
        for (size_t i = 1; i < scores.size(); ++i)
            if (scores[i] < scores[best]) best = i;
        out.selected.push_back(remaining[best]);
        remaining.erase(remaining.begin() + static_cast<long>(best));
    }
    out.aggregate.assign(ups[0].size(), 0.0);
    for (size_t idx : out.selected)
        for (size_t j = 0; j < ups[idx].size(); ++j) out.aggregate[j] += ups[idx][j];
    for (double& x : out.aggregate) x /= static_cast<double>(out.selected.size());
    return out;
}

// Spearman rank correlation; values are expected to be distinct.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
        return r;
    };
    const auto rx = ranks(xs);
    const auto ry = ranks(ys);
    const double n = static_cast<double>(xs.size());
    double d2 = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Small random instances for the aggregation equivalence checks.
inline std::vector<std::vector<double>> random_updates(flsim::RngStream& rng, size_t n, size_t d,
                                                       double scale = 2.0) {
    std::vector<std::vector<double>> ups(n, std::vector<double>(d));
    for (auto& u : ups)
        for (double& x : u) x = scale * rng.normal();
    return ups;
}

} // namespace testsup
