#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flsim/aggregation.hpp"
#include "flsim/model.hpp"

namespace flsim {

enum class FlipKind { slf, dlf };

std::string to_string(FlipKind k);
FlipKind flip_kind_from_string(const std::string& s);

/// How each compromised client's poisoned set is constructed: the flip
/// strategy, the intended per-client size, and the practical cap on it.
/// surrogate_spec may deliberately mismatch the true global architecture.
struct DpaPlan {
    FlipKind flip = FlipKind::slf;
    size_t per_client_size = 1;
    std::optional<ModelSpec> surrogate_spec;
    size_t size_cap = 1;
    std::optional<double> noise_sigma; // default: 0.05 x mean per-feature std
    Rounding rounding = Rounding::none;
};

struct SurrogateResult {
    ModelSpec spec;
    ParamVector params;
    size_t rounds_trained = 0;
};

/// Private FedAvg simulation over the compromised clients' benign shards
/// (all of them, every round, plain averaging). Empty shards are skipped;
/// all-empty input is an error.
SurrogateResult train_surrogate(std::span<const Dataset> compromised_data, const ModelSpec& spec,
                                size_t rounds, const TrainConfig& train_cfg, RngStream rng);

/// Large-|D_p| poisoned sets for the averaging-style rules: pool the
/// compromised clients' data, flip labels (dlf needs the surrogate), then
/// grow each client's copy to min(per_client_size, size_cap) with Gaussian
/// augmentation. Returns one dataset per compromised client.
std::vector<Dataset> build_dpa_avg_normb(std::span<const Dataset> compromised_data,
                                         const DpaPlan& plan, const SurrogateResult* surrogate,
                                         RngStream rng);

/// Same construction; the deviation objective it serves is checked against
/// the trimmed-mean rule in tests rather than loss/norm.
std::vector<Dataset> build_dpa_trmean(std::span<const Dataset> compromised_data,
                                      const DpaPlan& plan, const SurrogateResult* surrogate,
                                      RngStream rng);

struct MkrumTuneEntry {
    size_t size = 0;
    size_t trial = 0;
    size_t selected_count = 0;
    double deviation = 0.0;
};

struct MkrumTuneResult {
    Dataset poison;
    size_t size = 0;
    size_t selected_count = 0;
    double deviation = 0.0;
    std::vector<MkrumTuneEntry> log;
};

/// Searches 11 evenly spaced candidate sizes in [0.5, 3] x d_avg, sampling
/// `repeats` poisoned subsets per size from the flipped pool; each candidate
/// is scored by how many of the m would-be poisoned copies multi_krum admits
/// (ties broken by larger deviation, then by evaluation order). The would-be
/// updates are computed from theta_estimate, the adversary's surrogate view.
MkrumTuneResult tune_dp_mkrum(std::span<const Dataset> compromised_data, FlipKind flip,
                              const SurrogateResult* surrogate,
                              std::span<const ParamVector> benign_update_estimates, size_t d_avg,
                              const ModelSpec& global_spec, const ParamVector& theta_estimate,
                              const AggregationRule& rule, const TrainConfig& train_cfg,
                              size_t repeats, RngStream rng);

/// Yields candidate poisoned sets by trial index; nullopt means exhausted.
using SubsetSampler = std::function<std::optional<Dataset>(size_t trial)>;

/// Uniform-subset sampler over a fixed pool (never exhausts).
SubsetSampler make_pool_sampler(Dataset pool, size_t size, RngStream rng);

struct SignAlignEntry {
    size_t trial = 0;
    double sign_distance = 0.0;
};

struct SignAlignResult {
    Dataset poison;
    double best_distance = 0.0;
    bool sampler_exhausted = false;
    size_t trials_run = 0;
    std::vector<SignAlignEntry> log;
};

/// Monte-Carlo refinement: among `trials` sampled candidate sets of the given
/// size, keeps the one whose induced update's sign vector is L1-closest to
/// target_sign. An exhausted sampler returns the best so far with the warning
/// flag set.
SignAlignResult mc_sign_align(const SubsetSampler& sampler, size_t size,
                              const ParamVector& target_sign, size_t trials,
                              const ModelSpec& global_spec, const ParamVector& theta_estimate,
                              const TrainConfig& train_cfg, RngStream rng);

/// Pools the non-empty shards into one dataset.
Dataset pool_shards(std::span<const Dataset> shards);

/// Pooled compromised data with labels flipped by the given strategy (dlf
/// needs the surrogate).
Dataset build_flipped_pool(std::span<const Dataset> compromised_data, FlipKind flip,
                           const SurrogateResult* surrogate);

} // namespace flsim
