#include "flsim/attack_data.hpp"

#include <algorithm>
#include <cmath>

namespace flsim {

std::string to_string(FlipKind k) {
    return k == FlipKind::slf ? "slf" : "dlf";
}

FlipKind flip_kind_from_string(const std::string& s) {
    if (s == "slf") return FlipKind::slf;
    if (s == "dlf") return FlipKind::dlf;
    throw ConfigError("unknown flip kind: " + s);
}

Dataset pool_shards(std::span<const Dataset> shards) {
    if (shards.empty()) throw InputError("pool_shards: no shards");
    Dataset pool;
    pool.num_classes = shards[0].num_classes;
    for (const Dataset& s : shards) {
        if (s.num_classes != pool.num_classes)
            throw InputError("pool_shards: class count mismatch between shards");
        pool.examples.insert(pool.examples.end(), s.examples.begin(), s.examples.end());
    }
    return pool;
}

Dataset build_flipped_pool(std::span<const Dataset> compromised_data, FlipKind flip,
                           const SurrogateResult* surrogate) {
    const Dataset pool = pool_shards(compromised_data);
    if (pool.empty()) throw InputError("build_flipped_pool: compromised clients hold no data");
    if (flip == FlipKind::slf) return flip_static(pool);
    if (surrogate == nullptr)
        throw ConfigError("build_flipped_pool: dynamic label flipping requires a surrogate");
    return flip_dynamic(pool, surrogate->spec, surrogate->params);
}

namespace {

// Uniform subset of the pool, original order preserved.
Dataset sample_subset(const Dataset& pool, size_t size, RngStream rng) {
    if (size > pool.size()) throw InputError("sample_subset: size exceeds pool");
    Dataset out;
    out.num_classes = pool.num_classes;
    out.examples.reserve(size);
    for (size_t idx : rng.sample_without_replacement(pool.size(), size))
        out.examples.push_back(pool.examples[idx]);
    return out;
}

std::vector<Dataset> build_large_dp(std::span<const Dataset> compromised_data, const DpaPlan& plan,
                                    const SurrogateResult* surrogate, RngStream rng,
                                    const char* where) {
    if (plan.per_client_size < 1) throw InputError(std::string(where) + ": per-client size must be positive");
    const Dataset flipped = build_flipped_pool(compromised_data, plan.flip, surrogate);
    const size_t target = std::min(plan.per_client_size, plan.size_cap);
    if (target < 1) throw InputError(std::string(where) + ": size cap must be positive");
    const double sigma = plan.noise_sigma.value_or(default_noise_sigma(flipped));

    std::vector<Dataset> out;
    out.reserve(compromised_data.size());
    for (size_t k = 0; k < compromised_data.size(); ++k) {
        if (target <= flipped.size())
            out.push_back(sample_subset(flipped, target, rng.derive("subset", k)));
        else
            out.push_back(augment_gaussian(flipped, sigma, target, rng.derive("augment", k),
                                           plan.rounding));
    }
    return out;
}

} // namespace

SurrogateResult train_surrogate(std::span<const Dataset> compromised_data, const ModelSpec& spec,
                                size_t rounds, const TrainConfig& train_cfg, RngStream rng) {
    if (compromised_data.empty()) throw InputError("train_surrogate: no compromised shards");
    std::vector<const Dataset*> usable;
    for (const Dataset& s : compromised_data)
        if (!s.empty()) usable.push_back(&s);
    if (usable.empty()) throw InputError("train_surrogate: all compromised shards are empty");

    SurrogateResult result;
    result.spec = spec;
    result.params = init_params(spec, rng.derive("init"));
    result.rounds_trained = rounds;

    std::vector<ParamVector> updates(usable.size());
    for (size_t r = 0; r < rounds; ++r) {
        for (size_t k = 0; k < usable.size(); ++k)
            updates[k] = client_update(spec, result.params, *usable[k], train_cfg,
                                       rng.derive("round-client", r, k));
        const ParamVector agg = vec::mean_of(updates);
        vec::axpy(result.params, 1.0, agg);
    }
    return result;
}

std::vector<Dataset> build_dpa_avg_normb(std::span<const Dataset> compromised_data,
                                         const DpaPlan& plan, const SurrogateResult* surrogate,
                                         RngStream rng) {
    return build_large_dp(compromised_data, plan, surrogate, std::move(rng), "build_dpa_avg_normb");
}

std::vector<Dataset> build_dpa_trmean(std::span<const Dataset> compromised_data,
                                      const DpaPlan& plan, const SurrogateResult* surrogate,
                                      RngStream rng) {
    return build_large_dp(compromised_data, plan, surrogate, std::move(rng), "build_dpa_trmean");
}

MkrumTuneResult tune_dp_mkrum(std::span<const Dataset> compromised_data, FlipKind flip,
                              const SurrogateResult* surrogate,
                              std::span<const ParamVector> benign_update_estimates, size_t d_avg,
                              const ModelSpec& global_spec, const ParamVector& theta_estimate,
                              const AggregationRule& rule, const TrainConfig& train_cfg,
                              size_t repeats, RngStream rng) {
    if (rule.kind != AgrKind::multi_krum) throw ConfigError("tune_dp_mkrum: rule must be multi_krum");
    if (repeats < 1) throw InputError("tune_dp_mkrum: repeats must be at least 1");
    if (benign_update_estimates.empty())
        throw InputError("tune_dp_mkrum: no benign update estimates");
    if (d_avg < 1) throw InputError("tune_dp_mkrum: d_avg must be positive");

    const Dataset pool = build_flipped_pool(compromised_data, flip, surrogate);
    const double d = static_cast<double>(d_avg);
    const size_t min_size = std::max<size_t>(1, static_cast<size_t>(std::ceil(0.5 * d)));
    if (pool.size() < min_size)
        throw InputError("tune_dp_mkrum: flipped pool smaller than 0.5 x d_avg");

    // 11 evenly spaced integer sizes spanning [0.5, 3] x d_avg.
    std::vector<size_t> sizes;
    for (size_t i = 0; i <= 10; ++i) {
        const double s = 0.5 * d + static_cast<double>(i) * (2.5 * d / 10.0);
        sizes.push_back(std::max<size_t>(1, static_cast<size_t>(std::llround(s))));
    }

    const size_t m = std::max<size_t>(1, rule.m_assumed);
    MkrumTuneResult best;
    bool have_best = false;

    for (size_t si = 0; si < sizes.size(); ++si) {
        const size_t size = sizes[si];
        if (size > pool.size()) continue;
        for (size_t trial = 0; trial < repeats; ++trial) {
            Dataset candidate = sample_subset(pool, size, rng.derive("sample", si, trial));
            const ParamVector update = client_update(global_spec, theta_estimate, candidate,
                                                     train_cfg, rng.derive("train", si, trial));

            std::vector<ParamVector> all;
            all.reserve(m + benign_update_estimates.size());
            for (size_t i = 0; i < m; ++i) all.push_back(update);
            for (const ParamVector& u : benign_update_estimates) all.push_back(u);
            const size_t c = rule.c != 0 ? rule.c : resolve_multi_krum_c(all.size(), rule.m_assumed);
            const AggregationOutcome out = agg_multi_krum(all, rule.m_assumed, c);

            size_t count = 0;
            for (size_t idx : *out.selected_indices)
                if (idx < m) ++count;
            const double dev =
                vec::l2_distance(vec::mean_of(benign_update_estimates), out.aggregate);

            best.log.push_back({size, trial, count, dev});
            if (!have_best || count > best.selected_count ||
                (count == best.selected_count && dev > best.deviation)) {
                best.poison = std::move(candidate);
                best.size = size;
                best.selected_count = count;
                best.deviation = dev;
                have_best = true;
            }
        }
    }
    if (!have_best) throw InputError("tune_dp_mkrum: no candidate size fits the pool");
    return best;
}

SubsetSampler make_pool_sampler(Dataset pool, size_t size, RngStream rng) {
    if (size > pool.size()) throw InputError("make_pool_sampler: size exceeds pool");
    return [pool = std::move(pool), size, rng](size_t trial) -> std::optional<Dataset> {
        return sample_subset(pool, size, rng.derive("mc-sample", trial));
    };
}

SignAlignResult mc_sign_align(const SubsetSampler& sampler, size_t size,
                              const ParamVector& target_sign, size_t trials,
                              const ModelSpec& global_spec, const ParamVector& theta_estimate,
                              const TrainConfig& train_cfg, RngStream rng) {
    if (trials < 1) throw InputError("mc_sign_align: trials must be at least 1");

    SignAlignResult result;
    bool have_best = false;
    for (size_t t = 0; t < trials; ++t) {
        std::optional<Dataset> candidate = sampler(t);
        if (!candidate.has_value()) {
            result.sampler_exhausted = true;
            break;
        }
        if (candidate->size() != size)
            throw InputError("mc_sign_align: sampler returned a set of the wrong size");
        ++result.trials_run;
        const ParamVector update = client_update(global_spec, theta_estimate, *candidate,
                                                 train_cfg, rng.derive("mc", t));
        const ParamVector s = vec::sign_of(update);
        vec::check_same_dim(s, target_sign, "mc_sign_align");
        double dist = 0.0;
        for (size_t i = 0; i < s.size(); ++i) dist += std::abs(s[i] - target_sign[i]);
        result.log.push_back({t, dist});
        if (!have_best || dist < result.best_distance) { // first winner kept on ties
            result.poison = std::move(*candidate);
            result.best_distance = dist;
            have_best = true;
        }
    }
    if (!have_best) throw InputError("mc_sign_align: sampler yielded no candidates");
    return result;
}

} // namespace flsim
