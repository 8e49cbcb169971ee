#include "flsim/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace flsim {

std::string to_string(ThreatKind k) {
    switch (k) {
        case ThreatKind::none: return "none";
        case ThreatKind::whitebox_online_mp: return "whitebox_online_mp";
        case ThreatKind::nobox_offline_dp: return "nobox_offline_dp";
    }
    return "unknown";
}

std::string to_string(FlMode m) {
    return m == FlMode::cross_device ? "cross_device" : "cross_silo";
}

std::string to_string(SiloPlacement p) {
    return p == SiloPlacement::uniform ? "uniform" : "concentrated";
}

std::string to_string(AttackKind a) {
    switch (a) {
        case AttackKind::none: return "none";
        case AttackKind::lie: return "lie";
        case AttackKind::stat_opt: return "stat_opt";
        case AttackKind::dyn_opt: return "dyn_opt";
        case AttackKind::pga: return "pga";
        case AttackKind::dpa_slf: return "dpa_slf";
        case AttackKind::dpa_dlf: return "dpa_dlf";
    }
    return "unknown";
}

ThreatKind threat_kind_from_string(const std::string& s) {
    if (s == "none") return ThreatKind::none;
    if (s == "whitebox_online_mp") return ThreatKind::whitebox_online_mp;
    if (s == "nobox_offline_dp") return ThreatKind::nobox_offline_dp;
    throw ConfigError("unknown threat kind: " + s);
}

FlMode fl_mode_from_string(const std::string& s) {
    if (s == "cross_device") return FlMode::cross_device;
    if (s == "cross_silo") return FlMode::cross_silo;
    throw ConfigError("unknown FL mode: " + s);
}

SiloPlacement silo_placement_from_string(const std::string& s) {
    if (s == "uniform") return SiloPlacement::uniform;
    if (s == "concentrated") return SiloPlacement::concentrated;
    throw ConfigError("unknown silo placement: " + s);
}

AttackKind attack_kind_from_string(const std::string& s) {
    if (s == "none") return AttackKind::none;
    if (s == "lie") return AttackKind::lie;
    if (s == "stat_opt") return AttackKind::stat_opt;
    if (s == "dyn_opt") return AttackKind::dyn_opt;
    if (s == "pga") return AttackKind::pga;
    if (s == "dpa_slf") return AttackKind::dpa_slf;
    if (s == "dpa_dlf") return AttackKind::dpa_dlf;
    throw ConfigError("unknown attack kind: " + s);
}

ThreatKind threat_for_attack(AttackKind a) {
    switch (a) {
        case AttackKind::none: return ThreatKind::none;
        case AttackKind::lie:
        case AttackKind::stat_opt:
        case AttackKind::dyn_opt:
        case AttackKind::pga: return ThreatKind::whitebox_online_mp;
        case AttackKind::dpa_slf:
        case AttackKind::dpa_dlf: return ThreatKind::nobox_offline_dp;
    }
    return ThreatKind::none;
}

std::vector<size_t> sample_clients(size_t total, size_t per_round, RngStream rng) {
    if (per_round < 1 || per_round > total)
        throw ConfigError("sample_clients: need 1 <= n <= N (n=" + std::to_string(per_round) +
                          ", N=" + std::to_string(total) + ")");
    return rng.sample_without_replacement(total, per_round);
}

std::vector<size_t> place_compromised_cross_silo(size_t n_silos, size_t n_users, double m_percent,
                                                 SiloPlacement mode, RngStream rng) {
    (void)rng; // placement is deterministic for both modes
    if (n_silos < 1) throw ConfigError("place_compromised_cross_silo: need at least one silo");
    if (n_users % n_silos != 0)
        throw ConfigError("place_compromised_cross_silo: users must divide evenly across silos");
    if (m_percent < 0.0) throw ConfigError("place_compromised_cross_silo: negative M");
    const size_t capacity = n_users / n_silos;
    const size_t compromised =
        static_cast<size_t>(std::llround(m_percent / 100.0 * static_cast<double>(n_users)));
    if (compromised > n_users)
        throw ConfigError("place_compromised_cross_silo: compromised count exceeds users");

    std::vector<size_t> counts(n_silos, 0);
    if (mode == SiloPlacement::uniform) {
        const size_t base = compromised / n_silos;
        const size_t extra = compromised % n_silos;
        for (size_t s = 0; s < n_silos; ++s) counts[s] = base + (s < extra ? 1 : 0);
    } else {
        size_t left = compromised;
        for (size_t s = 0; s < n_silos && left > 0; ++s) {
            counts[s] = std::min(capacity, left);
            left -= counts[s];
        }
        if (std::accumulate(counts.begin(), counts.end(), size_t{0}) != compromised)
            throw ConfigError("place_compromised_cross_silo: compromised users exceed capacity");
    }
    return counts;
}

namespace {

size_t compromised_from_percent(double m_percent, size_t total) {
    if (m_percent < 0.0) throw ConfigError("negative compromised percentage");
    const size_t k =
        static_cast<size_t>(std::llround(m_percent / 100.0 * static_cast<double>(total)));
    if (k > total) throw ConfigError("compromised percentage exceeds population");
    return k;
}

// Clients with no local data contribute a zero update; Dirichlet splits can
// leave a shard empty.
ParamVector shard_update(const ModelSpec& spec, const ParamVector& params, const Dataset& shard,
                         const TrainConfig& cfg, RngStream rng) {
    if (shard.empty()) return ParamVector(params.size(), 0.0);
    return client_update(spec, params, shard, cfg, std::move(rng));
}

} // namespace

FlExperiment::FlExperiment(const FlConfig& config, const ThreatModel& threat,
                           const DataLayout& layout)
    : cfg_(config), threat_(threat), test_(layout.test), root_(config.seed), rule_(config.rule) {
    cfg_.spec.validate();
    if (cfg_.total_clients < 1) throw ConfigError("FlConfig: need at least one client");
    if (cfg_.rounds < 1) throw ConfigError("FlConfig: need at least one round");
    if (cfg_.mode == FlMode::cross_silo && cfg_.clients_per_round != cfg_.total_clients)
        throw ConfigError("FlConfig: cross-silo mode selects all clients each round (n must equal N)");
    if (cfg_.clients_per_round < 1 || cfg_.clients_per_round > cfg_.total_clients)
        throw ConfigError("FlConfig: need 1 <= n <= N");
    if (layout.train.empty()) throw ConfigError("DataLayout: empty training set");
    if (test_.empty()) throw ConfigError("DataLayout: empty test set");
    if (layout.train.feature_dim() != cfg_.spec.input_dim())
        throw ConfigError("DataLayout: training features do not match model input size");
    if (layout.train.num_classes != cfg_.spec.num_classes())
        throw ConfigError("DataLayout: class count does not match model output size");
    if (threat_.kind == ThreatKind::none && threat_.m_percent != 0.0)
        throw ConfigError("ThreatModel: kind none requires M = 0");
    if (threat_.kind != ThreatKind::none && threat_for_attack(threat_.attack.kind) != threat_.kind)
        throw ConfigError("ThreatModel: attack kind does not match threat kind");
    if (cfg_.mode == FlMode::cross_silo && threat_.kind == ThreatKind::whitebox_online_mp)
        throw ConfigError("ThreatModel: model poisoning is not simulated for cross-silo mode");

    if (cfg_.mode == FlMode::cross_device)
        build_cross_device_shards(layout);
    else
        build_cross_silo_shards(layout);

    // Pool the compromised clients' benign data once; the whitebox adversary
    // trains its ascent step on it.
    adversary_pool_ = Dataset{{}, layout.train.num_classes};
    for (size_t id : compromised_ids_) {
        const Dataset& s = true_shards_[id];
        adversary_pool_.examples.insert(adversary_pool_.examples.end(), s.examples.begin(),
                                        s.examples.end());
    }

    if (threat_.kind == ThreatKind::nobox_offline_dp && cfg_.mode == FlMode::cross_device)
        build_poisoned_shards();

    if (rule_.kind == AgrKind::norm_bound && rule_.tau <= 0.0) calibrate_norm_bound_tau();

    params_ = init_params(cfg_.spec, root_.derive("init"));
}

void FlExperiment::build_cross_device_shards(const DataLayout& layout) {
    Partition part =
        dirichlet_partition(layout.train, cfg_.total_clients, layout.alpha, root_.derive("partition"));
    true_shards_ = std::move(part.shards);
    effective_shards_ = true_shards_;

    compromised_count_ =
        threat_.kind == ThreatKind::none ? 0 : compromised_from_percent(threat_.m_percent, cfg_.total_clients);
    is_compromised_.assign(cfg_.total_clients, 0);
    for (size_t i = 0; i < compromised_count_; ++i) {
        compromised_ids_.push_back(i);
        is_compromised_[i] = 1;
    }
}

void FlExperiment::build_cross_silo_shards(const DataLayout& layout) {
    if (layout.users_total == 0 || layout.users_total % cfg_.total_clients != 0)
        throw ConfigError("DataLayout: users_total must be positive and divide evenly across silos");
    const size_t users_per_silo = layout.users_total / cfg_.total_clients;

    Partition users =
        dirichlet_partition(layout.train, layout.users_total, layout.alpha, root_.derive("partition"));

    std::vector<size_t> comp_counts(cfg_.total_clients, 0);
    if (threat_.kind == ThreatKind::nobox_offline_dp) {
        comp_counts = place_compromised_cross_silo(cfg_.total_clients, layout.users_total,
                                                   threat_.m_percent, layout.placement,
                                                   root_.derive("placement"));
    } else if (threat_.kind == ThreatKind::whitebox_online_mp) {
        throw ConfigError("cross-silo mode supports data poisoning threats only");
    }

    // The adversary's view: every compromised user's benign data.
    std::vector<Dataset> compromised_user_shards;
    for (size_t s = 0; s < cfg_.total_clients; ++s) {
        for (size_t u = 0; u < comp_counts[s]; ++u)
            compromised_user_shards.push_back(users.shards[s * users_per_silo + u]);
    }

    std::vector<Dataset> poison;
    if (!compromised_user_shards.empty()) {
        double mean_size = 0.0;
        for (const Dataset& s : compromised_user_shards) mean_size += static_cast<double>(s.size());
        mean_size /= static_cast<double>(compromised_user_shards.size());
        const size_t d_avg = std::max<size_t>(1, static_cast<size_t>(std::llround(mean_size)));

        DpaPlan plan;
        plan.flip = threat_.attack.kind == AttackKind::dpa_dlf ? FlipKind::dlf : FlipKind::slf;
        plan.per_client_size = std::max<size_t>(
            1, static_cast<size_t>(std::llround(threat_.attack.dp_mult * static_cast<double>(d_avg))));
        plan.size_cap = std::max<size_t>(
            1, static_cast<size_t>(std::llround(threat_.attack.size_cap_mult * static_cast<double>(d_avg))));
        plan.noise_sigma = threat_.attack.noise_sigma;
        plan.rounding = threat_.attack.rounding;

        SurrogateResult surrogate;
        const SurrogateResult* surrogate_ptr = nullptr;
        if (plan.flip == FlipKind::dlf) {
            surrogate = train_surrogate(compromised_user_shards,
                                        threat_.attack.surrogate_spec.value_or(cfg_.spec),
                                        threat_.attack.surrogate_rounds, cfg_.train_cfg,
                                        root_.derive("surrogate"));
            surrogate_ptr = &surrogate;
        }
        poison = build_dpa_avg_normb(compromised_user_shards, plan, surrogate_ptr,
                                     root_.derive("dpa"));
    }

    // Silo shard: benign users' data plus the poisoned sets its compromised
    // users contribute (replacing their benign data).
    true_shards_.assign(cfg_.total_clients, Dataset{{}, layout.train.num_classes});
    effective_shards_.assign(cfg_.total_clients, Dataset{{}, layout.train.num_classes});
    size_t poison_cursor = 0;
    for (size_t s = 0; s < cfg_.total_clients; ++s) {
        for (size_t u = 0; u < users_per_silo; ++u) {
            const Dataset& shard = users.shards[s * users_per_silo + u];
            true_shards_[s].examples.insert(true_shards_[s].examples.end(), shard.examples.begin(),
                                            shard.examples.end());
            if (u < comp_counts[s]) {
                const Dataset& dp = poison[poison_cursor++];
                effective_shards_[s].examples.insert(effective_shards_[s].examples.end(),
                                                     dp.examples.begin(), dp.examples.end());
            } else {
                effective_shards_[s].examples.insert(effective_shards_[s].examples.end(),
                                                     shard.examples.begin(), shard.examples.end());
            }
        }
        if (comp_counts[s] > 0) {
            compromised_ids_.push_back(s);
        }
    }

    // Silo-level bookkeeping: a silo counts as compromised when it received
    // any poisoned data.
    is_compromised_.assign(cfg_.total_clients, 0);
    for (size_t id : compromised_ids_) is_compromised_[id] = 1;
    compromised_count_ = compromised_ids_.size();
}

void FlExperiment::build_poisoned_shards() {
    if (compromised_ids_.empty()) return;

    std::vector<Dataset> adv_shards;
    for (size_t id : compromised_ids_) adv_shards.push_back(true_shards_[id]);

    double mean_size = 0.0;
    for (const Dataset& s : adv_shards) mean_size += static_cast<double>(s.size());
    mean_size /= static_cast<double>(adv_shards.size());
    const size_t d_avg = std::max<size_t>(1, static_cast<size_t>(std::llround(mean_size)));

    const AttackConfig& atk = threat_.attack;
    const FlipKind flip = atk.kind == AttackKind::dpa_dlf ? FlipKind::dlf : FlipKind::slf;

    const bool rule_is_mkrum = rule_.kind == AgrKind::multi_krum;
    SurrogateResult surrogate;
    const SurrogateResult* surrogate_ptr = nullptr;
    if (flip == FlipKind::dlf || rule_is_mkrum) {
        surrogate = train_surrogate(adv_shards, atk.surrogate_spec.value_or(cfg_.spec),
                                    atk.surrogate_rounds, cfg_.train_cfg, root_.derive("surrogate"));
        surrogate_ptr = &surrogate;
    }

    if (rule_is_mkrum) {
        // Size-tuned poisoned set, shared by all compromised clients.
        std::vector<ParamVector> benign_estimates;
        for (size_t k = 0; k < adv_shards.size(); ++k)
            benign_estimates.push_back(shard_update(surrogate.spec, surrogate.params, adv_shards[k],
                                                    cfg_.train_cfg, root_.derive("adv-est", k)));
        MkrumTuneResult tuned =
            tune_dp_mkrum(adv_shards, flip, surrogate_ptr, benign_estimates, d_avg, surrogate.spec,
                          surrogate.params, rule_, cfg_.train_cfg, 10, root_.derive("mkrum-tune"));
        tuning_log_ = tuned.log;

        Dataset final_poison = tuned.poison;
        if (atk.mc_trials > 0) {
            const Dataset pool = build_flipped_pool(adv_shards, flip, surrogate_ptr);
            ParamVector target = vec::sign_of(vec::mean_of(benign_estimates));
            for (double& x : target) x = -x;
            SignAlignResult aligned = mc_sign_align(
                make_pool_sampler(pool, tuned.size, root_.derive("mc-pool")), tuned.size, target,
                atk.mc_trials, surrogate.spec, surrogate.params, cfg_.train_cfg,
                root_.derive("mc-align"));
            sign_align_log_ = aligned.log;
            final_poison = aligned.poison;
        }
        for (size_t id : compromised_ids_) effective_shards_[id] = final_poison;
        return;
    }

    DpaPlan plan;
    plan.flip = flip;
    plan.per_client_size = std::max<size_t>(
        1, static_cast<size_t>(std::llround(atk.dp_mult * static_cast<double>(d_avg))));
    plan.size_cap = std::max<size_t>(
        1, static_cast<size_t>(std::llround(atk.size_cap_mult * static_cast<double>(d_avg))));
    plan.surrogate_spec = atk.surrogate_spec;
    plan.noise_sigma = atk.noise_sigma;
    plan.rounding = atk.rounding;

    std::vector<Dataset> poison;
    if (rule_.kind == AgrKind::trimmed_mean || rule_.kind == AgrKind::median)
        poison = build_dpa_trmean(adv_shards, plan, surrogate_ptr, root_.derive("dpa"));
    else
        poison = build_dpa_avg_normb(adv_shards, plan, surrogate_ptr, root_.derive("dpa"));
    for (size_t k = 0; k < compromised_ids_.size(); ++k)
        effective_shards_[compromised_ids_[k]] = std::move(poison[k]);
}

void FlExperiment::calibrate_norm_bound_tau() {
    // Short benign pilot run: the median client-update norm over a few
    // FedAvg rounds from the initial model. Both the clean run and its
    // attacked twin calibrate on benign shards, so they agree on tau, and the
    // attacker is assumed to know it.
    constexpr size_t kCalibrationRounds = 3;
    ParamVector params = init_params(cfg_.spec, root_.derive("init"));
    std::vector<double> norms;
    for (size_t r = 0; r < kCalibrationRounds; ++r) {
        const std::vector<size_t> selected =
            sample_clients(cfg_.total_clients, cfg_.clients_per_round, root_.derive("calib-select", r));
        std::vector<ParamVector> updates;
        updates.reserve(selected.size());
        for (size_t id : selected) {
            updates.push_back(shard_update(cfg_.spec, params, true_shards_[id], cfg_.train_cfg,
                                           root_.derive("calib-client", r, id)));
            norms.push_back(vec::l2_norm(updates.back()));
        }
        vec::axpy(params, cfg_.server_lr, vec::mean_of(updates));
    }
    std::sort(norms.begin(), norms.end());
    const size_t n = norms.size();
    double tau = (n % 2 == 1) ? norms[n / 2] : 0.5 * (norms[n / 2 - 1] + norms[n / 2]);
    if (tau <= 0.0) tau = 1.0; // degenerate pilot (zero updates); keep the rule usable
    rule_.tau = tau;
}

std::optional<ParamVector> FlExperiment::run_model_attack(size_t round, size_t m_selected) {
    MpaContext ctx;
    ctx.global_params = params_;
    ctx.m = m_selected;
    ctx.target_rule = rule_;
    ctx.benign_updates.reserve(compromised_ids_.size());
    for (size_t id : compromised_ids_)
        ctx.benign_updates.push_back(shard_update(cfg_.spec, params_, true_shards_[id],
                                                  cfg_.train_cfg, root_.derive("adv", round, id)));

    const AttackConfig& atk = threat_.attack;
    switch (atk.kind) {
        case AttackKind::lie: return lie_attack(ctx, atk.lie_z);
        case AttackKind::stat_opt: return stat_opt_attack(ctx, atk.project);
        case AttackKind::dyn_opt: return dyn_opt_attack(ctx, atk.project, atk.omega);
        case AttackKind::pga:
            return pga_attack(ctx, cfg_.spec, adversary_pool_, cfg_.train_cfg, atk.project,
                              root_.derive("attack", round));
        default:
            throw ConfigError("run_model_attack: not a model-poisoning attack kind");
    }
}

RoundRecord FlExperiment::step() {
    const size_t t = round_;
    if (t >= cfg_.rounds) throw InputError("step: experiment already finished");
    const double eta = cfg_.server_lr * std::pow(cfg_.lr_decay, static_cast<double>(t));

    const std::vector<size_t> selected =
        sample_clients(cfg_.total_clients, cfg_.clients_per_round, root_.derive("select", t));

    size_t m_selected = 0;
    for (size_t id : selected)
        if (is_compromised_[id]) ++m_selected;

    std::optional<ParamVector> poisoned;
    if (threat_.kind == ThreatKind::whitebox_online_mp && m_selected > 0)
        poisoned = run_model_attack(t, m_selected);

    std::vector<ParamVector> updates;
    std::vector<double> weights;
    updates.reserve(selected.size());
    weights.reserve(selected.size());
    double benign_norm_sum = 0.0;
    size_t benign_count = 0;
    for (size_t id : selected) {
        const bool attacker_slot =
            threat_.kind == ThreatKind::whitebox_online_mp && is_compromised_[id] && poisoned;
        if (attacker_slot) {
            updates.push_back(*poisoned);
        } else {
            updates.push_back(shard_update(cfg_.spec, params_, effective_shards_[id], cfg_.train_cfg,
                                           root_.derive("client", t, id)));
        }
        weights.push_back(std::max<double>(1.0, static_cast<double>(effective_shards_[id].size())));
        if (!is_compromised_[id]) {
            benign_norm_sum += vec::l2_norm(updates.back());
            ++benign_count;
        }
    }

    AggregationOutcome outcome;
    try {
        outcome = aggregate(rule_, updates, &weights);
    } catch (const Error& e) {
        throw ConfigError("round " + std::to_string(t) + ": aggregation failed: " + e.what());
    }

    vec::axpy(params_, eta, outcome.aggregate);
    try {
        vec::check_finite(params_, "global parameters");
    } catch (const NumericError& e) {
        throw NumericError("round " + std::to_string(t) + ": " + e.what());
    }

    RoundRecord rec;
    rec.round = t;
    rec.selected = selected;
    rec.compromised_selected = m_selected;
    rec.accuracy = evaluate(cfg_.spec, params_, test_);
    rec.mean_benign_norm = benign_count > 0 ? benign_norm_sum / static_cast<double>(benign_count) : 0.0;
    rec.aggregate_norm = vec::l2_norm(outcome.aggregate);
    records_.push_back(rec);
    ++round_;
    return rec;
}

uint64_t FlExperiment::poison_fingerprint() const {
    uint64_t h = 0xcbf2'9ce4'8422'2325ull;
    for (size_t id : compromised_ids_) h ^= dataset_fingerprint(effective_shards_[id]) + 0x9e3779b9u + (h << 6) + (h >> 2);
    return h;
}

ExperimentResult FlExperiment::run() {
    const auto start = std::chrono::steady_clock::now();
    const uint64_t fingerprint_before = poison_fingerprint();
    while (round_ < cfg_.rounds) step();
    if (poison_fingerprint() != fingerprint_before)
        throw Error("offline constraint violated: compromised shards changed during the run");

    ExperimentResult result;
    result.records = records_;
    result.a_theta_star = 0.0;
    for (const RoundRecord& r : records_) result.a_theta_star = std::max(result.a_theta_star, r.accuracy);
    result.config = cfg_;
    result.threat_kind = threat_.kind;
    result.m_percent = threat_.m_percent;
    result.attack_kind = threat_.attack.kind;
    result.resolved_tau = rule_.tau;
    result.poison_fingerprint = fingerprint_before;
    result.tuning_log = tuning_log_;
    result.sign_align_log = sign_align_log_;
    result.wallclock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

ExperimentResult run_experiment(const FlConfig& config, const ThreatModel& threat,
                                const DataLayout& layout) {
    FlExperiment exp(config, threat, layout);
    return exp.run();
}

double attack_impact(const ExperimentResult& clean, const ExperimentResult& attacked) {
    const FlConfig& a = clean.config;
    const FlConfig& b = attacked.config;
    const bool same = a.mode == b.mode && a.total_clients == b.total_clients &&
                      a.clients_per_round == b.clients_per_round && a.rounds == b.rounds &&
                      a.server_lr == b.server_lr && a.lr_decay == b.lr_decay && a.spec == b.spec &&
                      a.train_cfg == b.train_cfg && a.rule == b.rule && a.seed == b.seed;
    if (!same) throw InputError("attack_impact: results come from different configurations");
    return clean.a_theta_star - attacked.a_theta_star;
}

} // namespace flsim
