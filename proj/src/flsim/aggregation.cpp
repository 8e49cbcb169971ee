#include "flsim/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace flsim {

std::string to_string(AgrKind k) {
    switch (k) {
        case AgrKind::average: return "average";
        case AgrKind::norm_bound: return "norm_bound";
        case AgrKind::multi_krum: return "multi_krum";
        case AgrKind::trimmed_mean: return "trimmed_mean";
        case AgrKind::median: return "median";
    }
    return "unknown";
}

AgrKind agr_kind_from_string(const std::string& s) {
    if (s == "average") return AgrKind::average;
    if (s == "norm_bound") return AgrKind::norm_bound;
    if (s == "multi_krum") return AgrKind::multi_krum;
    if (s == "trimmed_mean") return AgrKind::trimmed_mean;
    if (s == "median") return AgrKind::median;
    throw ConfigError("unknown aggregation rule: " + s);
}

namespace {

void check_updates(std::span<const ParamVector> updates, const char* where) {
    if (updates.empty()) throw InputError(std::string(where) + ": no updates");
    const size_t d = updates[0].size();
    for (const ParamVector& u : updates)
        if (u.size() != d) throw InputError(std::string(where) + ": update dimension mismatch");
}

} // namespace

AggregationOutcome agg_average(std::span<const ParamVector> updates,
                               const std::vector<double>* weights) {
    check_updates(updates, "agg_average");
    AggregationOutcome out;
    if (weights == nullptr) {
        out.aggregate = vec::mean_of(updates);
        return out;
    }
    if (weights->size() != updates.size())
        throw InputError("agg_average: weight count does not match update count");
    double total = 0.0;
    for (double w : *weights) {
        if (w <= 0.0) throw InputError("agg_average: weights must be positive");
        total += w;
    }
    out.aggregate.assign(updates[0].size(), 0.0);
    for (size_t i = 0; i < updates.size(); ++i) vec::axpy(out.aggregate, (*weights)[i], updates[i]);
    for (double& x : out.aggregate) x /= total;
    return out;
}

AggregationOutcome agg_norm_bound(std::span<const ParamVector> updates, double tau) {
    check_updates(updates, "agg_norm_bound");
    if (tau <= 0.0) throw ConfigError("agg_norm_bound: tau must be positive");
    AggregationOutcome out;
    out.per_update_scale.emplace();
    out.per_update_scale->reserve(updates.size());
    out.aggregate.assign(updates[0].size(), 0.0);
    for (const ParamVector& u : updates) {
        const double norm = vec::l2_norm(u);
        const double scale = norm > tau ? tau / norm : 1.0;
        out.per_update_scale->push_back(scale);
        vec::axpy(out.aggregate, scale, u);
    }
    const double inv = 1.0 / static_cast<double>(updates.size());
    for (double& x : out.aggregate) x *= inv;
    return out;
}

namespace {

// Krum score restricted to a subset of the updates (identified by index).
// k nearest neighbours with k = |subset| - m_assumed - 2.
std::vector<double> krum_scores_subset(std::span<const ParamVector> updates,
                                       const std::vector<size_t>& subset, size_t m_assumed) {
    const size_t n = subset.size();
    if (n < m_assumed + 3)
        throw ConfigError("krum: need n - m_assumed - 2 >= 1 (n=" + std::to_string(n) +
                          ", m=" + std::to_string(m_assumed) + ")");
    const size_t k = n - m_assumed - 2;
    std::vector<double> scores(n, 0.0);
    std::vector<double> dists;
    dists.reserve(n - 1);
    for (size_t i = 0; i < n; ++i) {
        dists.clear();
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dists.push_back(vec::l2_distance_sq(updates[subset[i]], updates[subset[j]]));
        }
        std::sort(dists.begin(), dists.end());
        scores[i] = std::accumulate(dists.begin(), dists.begin() + static_cast<long>(k), 0.0);
    }
    return scores;
}

} // namespace

std::vector<double> krum_scores(std::span<const ParamVector> updates, size_t m_assumed) {
    check_updates(updates, "krum_scores");
    std::vector<size_t> all(updates.size());
    std::iota(all.begin(), all.end(), size_t{0});
    return krum_scores_subset(updates, all, m_assumed);
}

size_t resolve_multi_krum_c(size_t n, size_t m_assumed) {
    // n - c > 2m + 2  <=>  c < n - 2m - 2; the largest integer choice.
    if (n < 2 * m_assumed + 4)
        throw ConfigError("multi_krum: no valid c for n=" + std::to_string(n) +
                          ", m_assumed=" + std::to_string(m_assumed));
    return n - 2 * m_assumed - 3;
}

AggregationOutcome agg_multi_krum(std::span<const ParamVector> updates, size_t m_assumed,
                                  size_t c) {
    check_updates(updates, "agg_multi_krum");
    const size_t n = updates.size();
    if (c == 0) throw ConfigError("agg_multi_krum: c must be positive");
    if (n <= c + 2 * m_assumed + 2)
        throw ConfigError("agg_multi_krum: requires n - c > 2*m_assumed + 2 (n=" +
                          std::to_string(n) + ", c=" + std::to_string(c) +
                          ", m_assumed=" + std::to_string(m_assumed) + ")");

    std::vector<size_t> remaining(n);
    std::iota(remaining.begin(), remaining.end(), size_t{0});
    std::vector<size_t> selected;
    selected.reserve(c);

    while (selected.size() < c) {
        const std::vector<double> scores = krum_scores_subset(updates, remaining, m_assumed);
        size_t best = 0;
        for (size_t i = 1; i < scores.size(); ++i) {
            // Ties break toward the lowest original index; `remaining` is
            // kept sorted so positional order matches index order.
            if (scores[i] < scores[best]) best = i;
        }
        selected.push_back(remaining[best]);
        remaining.erase(remaining.begin() + static_cast<long>(best));
    }

    AggregationOutcome out;
    out.aggregate.assign(updates[0].size(), 0.0);
    for (size_t idx : selected) vec::axpy(out.aggregate, 1.0, updates[idx]);
    const double inv = 1.0 / static_cast<double>(selected.size());
    for (double& x : out.aggregate) x *= inv;
    out.selected_indices = std::move(selected);
    return out;
}

AggregationOutcome agg_trimmed_mean(std::span<const ParamVector> updates, size_t m_assumed) {
    check_updates(updates, "agg_trimmed_mean");
    const size_t n = updates.size();
    if (2 * m_assumed >= n)
        throw ConfigError("agg_trimmed_mean: requires 2*m_assumed < n (n=" + std::to_string(n) +
                          ", m_assumed=" + std::to_string(m_assumed) + ")");
    const size_t d = updates[0].size();
    AggregationOutcome out;
    out.aggregate.assign(d, 0.0);
    std::vector<double> column(n);
    for (size_t j = 0; j < d; ++j) {
        for (size_t i = 0; i < n; ++i) column[i] = updates[i][j];
        std::sort(column.begin(), column.end());
        double s = 0.0;
        for (size_t i = m_assumed; i < n - m_assumed; ++i) s += column[i];
        out.aggregate[j] = s / static_cast<double>(n - 2 * m_assumed);
    }
    return out;
}

AggregationOutcome agg_median(std::span<const ParamVector> updates) {
    check_updates(updates, "agg_median");
    const size_t n = updates.size();
    const size_t d = updates[0].size();
    AggregationOutcome out;
    out.aggregate.assign(d, 0.0);
    std::vector<double> column(n);
    for (size_t j = 0; j < d; ++j) {
        for (size_t i = 0; i < n; ++i) column[i] = updates[i][j];
        std::sort(column.begin(), column.end());
        out.aggregate[j] = (n % 2 == 1) ? column[n / 2]
                                        : 0.5 * (column[n / 2 - 1] + column[n / 2]);
    }
    return out;
}

AggregationOutcome aggregate(const AggregationRule& rule, std::span<const ParamVector> updates,
                             const std::vector<double>* weights) {
    switch (rule.kind) {
        case AgrKind::average:
            return agg_average(updates, rule.weighted ? weights : nullptr);
        case AgrKind::norm_bound:
            return agg_norm_bound(updates, rule.tau);
        case AgrKind::multi_krum: {
            const size_t c = rule.c != 0 ? rule.c
                                         : resolve_multi_krum_c(updates.size(), rule.m_assumed);
            return agg_multi_krum(updates, rule.m_assumed, c);
        }
        case AgrKind::trimmed_mean:
            return agg_trimmed_mean(updates, rule.m_assumed);
        case AgrKind::median:
            return agg_median(updates);
    }
    throw ConfigError("aggregate: unknown rule kind");
}

} // namespace flsim
