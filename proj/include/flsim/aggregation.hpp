#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flsim/vec.hpp"

namespace flsim {

enum class AgrKind { average, norm_bound, multi_krum, trimmed_mean, median };

std::string to_string(AgrKind k);
AgrKind agr_kind_from_string(const std::string& s);

/// Server-side aggregation rule plus its parameters.
///
/// tau applies to norm_bound only (0 means "calibrate from benign update
/// norms"). m_assumed is the rule's assumption about the number of poisoned
/// inputs (multi_krum, trimmed_mean). c is multi_krum's selection size; 0
/// picks the largest value satisfying n - c > 2*m_assumed + 2.
struct AggregationRule {
    AgrKind kind = AgrKind::average;
    double tau = 0.0;
    size_t m_assumed = 0;
    size_t c = 0;
    bool weighted = false; // average only: weight updates by shard size

    bool operator==(const AggregationRule&) const = default;
};

struct AggregationOutcome {
    ParamVector aggregate;
    /// multi_krum: members of the selection set, in selection order.
    std::optional<std::vector<size_t>> selected_indices;
    /// norm_bound: the factor applied to each update (1 for pass-through).
    std::optional<std::vector<double>> per_update_scale;
};

/// Dimension-wise (optionally weighted) mean.
AggregationOutcome agg_average(std::span<const ParamVector> updates,
                               const std::vector<double>* weights = nullptr);

/// Updates with L2 norm above tau are scaled down to tau, others pass through
/// untouched; the aggregate is the plain mean of the results.
AggregationOutcome agg_norm_bound(std::span<const ParamVector> updates, double tau);

/// Per-update score: sum of squared distances to its n - m_assumed - 2
/// nearest other updates. Requires n - m_assumed - 2 >= 1.
std::vector<double> krum_scores(std::span<const ParamVector> updates, size_t m_assumed);

/// Iteratively moves the lowest-score update (lowest index on ties) into the
/// selection set, rescoring the remainder, until c updates are selected; the
/// aggregate is their mean. Requires n - c > 2*m_assumed + 2.
AggregationOutcome agg_multi_krum(std::span<const ParamVector> updates, size_t m_assumed,
                                  size_t c);

/// Per dimension: sort, drop the m_assumed largest and smallest values,
/// average the rest. Requires 2*m_assumed < n.
AggregationOutcome agg_trimmed_mean(std::span<const ParamVector> updates, size_t m_assumed);

/// Per-dimension median (midpoint of the two central values for even n).
AggregationOutcome agg_median(std::span<const ParamVector> updates);

/// Largest c with n - c > 2m + 2.
size_t resolve_multi_krum_c(size_t n, size_t m_assumed);

/// Dispatch on rule.kind, resolving c = 0 against the update count. Weights
/// apply to the weighted-average variant only.
AggregationOutcome aggregate(const AggregationRule& rule, std::span<const ParamVector> updates,
                             const std::vector<double>* weights = nullptr);

} // namespace flsim
