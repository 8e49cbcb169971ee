#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flsim/attack_data.hpp"
#include "flsim/attack_model.hpp"

namespace flsim {

enum class ThreatKind { none, whitebox_online_mp, nobox_offline_dp };
enum class FlMode { cross_device, cross_silo };
enum class SiloPlacement { uniform, concentrated };
enum class AttackKind { none, lie, stat_opt, dyn_opt, pga, dpa_slf, dpa_dlf };

std::string to_string(ThreatKind k);
std::string to_string(FlMode m);
std::string to_string(SiloPlacement p);
std::string to_string(AttackKind a);
ThreatKind threat_kind_from_string(const std::string& s);
FlMode fl_mode_from_string(const std::string& s);
SiloPlacement silo_placement_from_string(const std::string& s);
AttackKind attack_kind_from_string(const std::string& s);

/// The threat a given attack kind operates under.
ThreatKind threat_for_attack(AttackKind a);

/// Attack parameters; which fields matter depends on the kind. The dp_*
/// fields size the poisoned sets as multiples of the adversary's estimate of
/// the average benign shard size.
struct AttackConfig {
    AttackKind kind = AttackKind::none;
    // model poisoning
    std::optional<double> lie_z;
    OmegaKind omega = OmegaKind::inv_unit;
    ProjectConfig project;
    // data poisoning
    double dp_mult = 100.0;
    double size_cap_mult = 100.0;
    std::optional<double> noise_sigma;
    Rounding rounding = Rounding::none;
    size_t surrogate_rounds = 30;
    std::optional<ModelSpec> surrogate_spec; // unset: adversary knows the architecture
    size_t mc_trials = 10;                   // sign-alignment refinement (multi_krum path)
};

struct ThreatModel {
    ThreatKind kind = ThreatKind::none;
    double m_percent = 0.0;
    AttackConfig attack;
};

struct FlConfig {
    FlMode mode = FlMode::cross_device;
    size_t total_clients = 0;    // N
    size_t clients_per_round = 0; // n (= N in cross-silo mode)
    size_t rounds = 1;
    double server_lr = 1.0;
    double lr_decay = 1.0;
    ModelSpec spec;
    TrainConfig train_cfg;
    AggregationRule rule;
    uint64_t seed = 1;
};

/// Training/evaluation data plus partition parameters. The cross-silo fields
/// describe how users map onto silos.
struct DataLayout {
    Dataset train;
    Dataset test;
    double alpha = 1.0;
    size_t users_total = 0; // cross-silo only; must divide evenly across silos
    SiloPlacement placement = SiloPlacement::uniform;
};

struct RoundRecord {
    size_t round = 0;
    std::vector<size_t> selected;
    size_t compromised_selected = 0;
    double accuracy = 0.0;
    double mean_benign_norm = 0.0;
    double aggregate_norm = 0.0;
};

struct ExperimentResult {
    std::vector<RoundRecord> records;
    double a_theta_star = 0.0; // max accuracy over rounds
    FlConfig config;
    ThreatKind threat_kind = ThreatKind::none;
    double m_percent = 0.0;
    AttackKind attack_kind = AttackKind::none;
    double resolved_tau = 0.0;
    uint64_t poison_fingerprint = 0;
    double wallclock_sec = 0.0;
    std::vector<MkrumTuneEntry> tuning_log;
    std::vector<SignAlignEntry> sign_align_log;
};

/// Uniform sample of n distinct client ids out of N, sorted.
std::vector<size_t> sample_clients(size_t total, size_t per_round, RngStream rng);

/// Per-silo compromised-user counts. uniform spreads them evenly (remainder
/// to the lowest-index silos); concentrated fills silos to capacity starting
/// from silo 0. Users must divide evenly across silos.
std::vector<size_t> place_compromised_cross_silo(size_t n_silos, size_t n_users, double m_percent,
                                                 SiloPlacement mode, RngStream rng);

/// One FL experiment, stepped round by round. Exposed so tests can inspect
/// shards and parameters between rounds; run_experiment is the usual entry.
class FlExperiment {
public:
    FlExperiment(const FlConfig& config, const ThreatModel& threat, const DataLayout& layout);

    RoundRecord step();
    ExperimentResult run();

    const ParamVector& global_params() const { return params_; }
    const std::vector<Dataset>& effective_shards() const { return effective_shards_; }
    const std::vector<Dataset>& benign_shards() const { return true_shards_; }
    size_t compromised_count() const { return compromised_count_; }
    double resolved_tau() const { return rule_.tau; }
    size_t rounds_done() const { return round_; }

    /// Hash over the compromised clients' effective shards; compared between
    /// round 0 and round T to enforce the offline constraint.
    uint64_t poison_fingerprint() const;

private:
    void build_cross_device_shards(const DataLayout& layout);
    void build_cross_silo_shards(const DataLayout& layout);
    void build_poisoned_shards();
    void calibrate_norm_bound_tau();
    std::optional<ParamVector> run_model_attack(size_t round, size_t m_selected);

    FlConfig cfg_;
    ThreatModel threat_;
    Dataset test_;
    RngStream root_;
    AggregationRule rule_;
    std::vector<Dataset> true_shards_;
    std::vector<Dataset> effective_shards_;
    std::vector<size_t> compromised_ids_; // sorted
    std::vector<uint8_t> is_compromised_;
    size_t compromised_count_ = 0;
    Dataset adversary_pool_; // compromised clients' benign data, pooled
    ParamVector params_;
    size_t round_ = 0;
    std::vector<RoundRecord> records_;
    std::vector<MkrumTuneEntry> tuning_log_;
    std::vector<SignAlignEntry> sign_align_log_;
};

ExperimentResult run_experiment(const FlConfig& config, const ThreatModel& threat,
                                const DataLayout& layout);

/// I_theta = clean A*_theta - attacked A*_theta. The two results must agree
/// on everything except the threat.
double attack_impact(const ExperimentResult& clean, const ExperimentResult& attacked);

} // namespace flsim
