#include "flsim/attack_model.hpp"

#include <algorithm>
#include <cmath>

namespace flsim {

std::string to_string(OmegaKind k) {
    switch (k) {
        case OmegaKind::inv_unit: return "inv_unit";
        case OmegaKind::inv_std: return "inv_std";
        case OmegaKind::inv_sign: return "inv_sign";
    }
    return "unknown";
}

OmegaKind omega_kind_from_string(const std::string& s) {
    if (s == "inv_unit") return OmegaKind::inv_unit;
    if (s == "inv_std") return OmegaKind::inv_std;
    if (s == "inv_sign") return OmegaKind::inv_sign;
    throw ConfigError("unknown omega kind: " + s);
}

namespace {

void check_ctx(const MpaContext& ctx, const char* where) {
    if (ctx.benign_updates.empty()) throw InputError(std::string(where) + ": no benign updates");
    if (ctx.m < 1) throw InputError(std::string(where) + ": m must be at least 1");
    const size_t d = ctx.benign_updates[0].size();
    for (const ParamVector& u : ctx.benign_updates)
        if (u.size() != d) throw InputError(std::string(where) + ": benign update dim mismatch");
}

// m copies of the poisoned update ahead of the benign ones, aggregated with
// the target rule (c resolved against the combined count).
AggregationOutcome poisoned_aggregate(const MpaContext& ctx, const ParamVector& poisoned) {
    std::vector<ParamVector> all;
    all.reserve(ctx.m + ctx.benign_updates.size());
    for (size_t i = 0; i < ctx.m; ++i) all.push_back(poisoned);
    for (const ParamVector& u : ctx.benign_updates) all.push_back(u);
    return aggregate(ctx.target_rule, all);
}

// Multi-krum admission: all m poisoned copies make it into the selection set.
bool all_copies_selected(const MpaContext& ctx, const ParamVector& poisoned) {
    const AggregationOutcome out = poisoned_aggregate(ctx, poisoned);
    if (!out.selected_indices) return false;
    size_t selected_copies = 0;
    for (size_t idx : *out.selected_indices)
        if (idx < ctx.m) ++selected_copies;
    return selected_copies == ctx.m;
}

} // namespace

double deviation(const MpaContext& ctx, const ParamVector& poisoned) {
    check_ctx(ctx, "deviation");
    vec::check_same_dim(ctx.benign_updates[0], poisoned, "deviation");
    const ParamVector benign_agg = vec::mean_of(ctx.benign_updates);
    const AggregationOutcome out = poisoned_aggregate(ctx, poisoned);
    return vec::l2_distance(benign_agg, out.aggregate);
}

double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InputError("inverse_normal_cdf: p must be in (0,1)");

    // Acklam's rational approximation.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    // One Halley step against the exact CDF.
    constexpr double sqrt2 = 1.4142135623730950488;
    constexpr double sqrt_2pi = 2.5066282746310005024;
    const double err = 0.5 * std::erfc(-x / sqrt2) - p;
    const double u = err * sqrt_2pi * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

double default_lie_z(size_t n_total, size_t m) {
    if (m >= n_total) throw ConfigError("default_lie_z: m must be below the total client count");
    const double n = static_cast<double>(n_total);
    const double md = static_cast<double>(m);
    const double s = std::floor(n / 2.0 + 1.0) - md;
    const double q = (n - md - s) / (n - md);
    if (!(q > 0.0 && q < 1.0))
        throw ConfigError("default_lie_z: degenerate quantile; too many compromised clients");
    return inverse_normal_cdf(q);
}

ParamVector lie_attack(const MpaContext& ctx, std::optional<double> z) {
    check_ctx(ctx, "lie_attack");
    if (!z.has_value() && ctx.benign_updates.size() < 2)
        throw InputError("lie_attack: need at least 2 benign updates to compute z");
    const double zv = z.has_value()
                          ? *z
                          : default_lie_z(ctx.benign_updates.size() + ctx.m, ctx.m);
    ParamVector out = vec::mean_of(ctx.benign_updates);
    const ParamVector sigma = vec::stddev_of(ctx.benign_updates);
    vec::axpy(out, zv, sigma);
    return out;
}

std::optional<ParamVector> stat_opt_attack(const MpaContext& ctx, const ProjectConfig& cfg) {
    check_ctx(ctx, "stat_opt_attack");
    if (cfg.gamma_step <= 0.0 || cfg.gamma_max < 1.0)
        throw ConfigError("stat_opt_attack: invalid gamma grid");

    const ParamVector omega = vec::scaled(vec::sign_of(vec::mean_of(ctx.benign_updates)), -1.0);
    const bool needs_selection = ctx.target_rule.kind == AgrKind::multi_krum;

    std::optional<ParamVector> best;
    double best_dev = -1.0;
    for (size_t k = 1;; ++k) {
        const double gamma = static_cast<double>(k) * cfg.gamma_step;
        if (gamma > cfg.gamma_max + 1e-12) break;
        ParamVector cand = vec::scaled(omega, gamma);
        if (needs_selection && !all_copies_selected(ctx, cand)) continue;
        const double dev = deviation(ctx, cand);
        if (dev > best_dev) { // strict: smallest gamma wins ties
            best_dev = dev;
            best = std::move(cand);
        }
    }
    return best;
}

ParamVector dyn_opt_attack(const MpaContext& ctx, const ProjectConfig& cfg, OmegaKind omega_kind) {
    check_ctx(ctx, "dyn_opt_attack");
    if (cfg.gamma_step <= 0.0 || cfg.gamma_max < 1.0)
        throw ConfigError("dyn_opt_attack: invalid gamma grid");

    const ParamVector benign_mean = vec::mean_of(ctx.benign_updates);
    ParamVector omega;
    switch (omega_kind) {
        case OmegaKind::inv_unit: {
            const double norm = vec::l2_norm(benign_mean);
            if (norm == 0.0)
                throw DegenerateDirectionError("dyn_opt_attack: benign mean is zero, inv_unit undefined");
            omega = vec::scaled(benign_mean, -1.0 / norm);
            break;
        }
        case OmegaKind::inv_std:
            omega = vec::scaled(vec::stddev_of(ctx.benign_updates), -1.0);
            break;
        case OmegaKind::inv_sign:
            omega = vec::scaled(vec::sign_of(benign_mean), -1.0);
            break;
    }

    double best_gamma = 0.0;
    if (ctx.target_rule.kind == AgrKind::multi_krum) {
        // Largest grid value whose m copies all pass selection; 0 when none
        // does, which degrades to the benign-looking mean.
        for (size_t k = 1;; ++k) {
            const double gamma = static_cast<double>(k) * cfg.gamma_step;
            if (gamma > cfg.gamma_max + 1e-12) break;
            ParamVector cand = benign_mean;
            vec::axpy(cand, gamma, omega);
            if (all_copies_selected(ctx, cand)) best_gamma = gamma;
        }
    } else {
        double best_dev = -1.0;
        for (size_t k = 1;; ++k) {
            const double gamma = static_cast<double>(k) * cfg.gamma_step;
            if (gamma > cfg.gamma_max + 1e-12) break;
            ParamVector cand = benign_mean;
            vec::axpy(cand, gamma, omega);
            const double dev = deviation(ctx, cand);
            if (dev > best_dev) {
                best_dev = dev;
                best_gamma = gamma;
            }
        }
    }
    ParamVector out = benign_mean;
    vec::axpy(out, best_gamma, omega);
    return out;
}

std::optional<ParamVector> project_update(const MpaContext& ctx, const ParamVector& raw,
                                          double tau, const ProjectConfig& cfg) {
    check_ctx(ctx, "project_update");
    if (tau <= 0.0) throw InputError("project_update: tau must be positive");
    if (cfg.gamma_step <= 0.0 || cfg.gamma_max < 1.0)
        throw ConfigError("project_update: invalid gamma grid");
    const double raw_norm = vec::l2_norm(raw);
    if (raw_norm == 0.0) throw DegenerateDirectionError("project_update: zero update");

    const ParamVector unit_tau = vec::scaled(raw, tau / raw_norm);

    switch (ctx.target_rule.kind) {
        case AgrKind::average:
            // No robustness constraint to pass; an arbitrarily large scaling
            // maximizes the deviation outright.
            return vec::scaled(unit_tau, 1e20);
        case AgrKind::norm_bound:
            // The rule clips anything above tau, so the best admissible
            // update is exactly at the threshold.
            return unit_tau;
        case AgrKind::multi_krum: {
            std::optional<ParamVector> best;
            for (size_t k = 0;; ++k) {
                const double gamma = 1.0 + static_cast<double>(k) * cfg.gamma_step;
                if (gamma > cfg.gamma_max + 1e-12) break;
                ParamVector cand = vec::scaled(unit_tau, gamma);
                if (all_copies_selected(ctx, cand)) best = std::move(cand); // keep largest
            }
            return best;
        }
        default: {
            double best_dev = -1.0;
            ParamVector best;
            for (size_t k = 0;; ++k) {
                const double gamma = 1.0 + static_cast<double>(k) * cfg.gamma_step;
                if (gamma > cfg.gamma_max + 1e-12) break;
                ParamVector cand = vec::scaled(unit_tau, gamma);
                const double dev = deviation(ctx, cand);
                if (dev > best_dev) {
                    best_dev = dev;
                    best = std::move(cand);
                }
            }
            return best;
        }
    }
}

std::optional<ParamVector> pga_attack(const MpaContext& ctx, const ModelSpec& spec,
                                      const Dataset& adv_data, const TrainConfig& train_cfg,
                                      const ProjectConfig& cfg, RngStream rng) {
    check_ctx(ctx, "pga_attack");
    if (adv_data.empty()) throw InputError("pga_attack: empty adversary dataset");

    double tau = 0.0;
    for (const ParamVector& u : ctx.benign_updates) tau += vec::l2_norm(u);
    tau /= static_cast<double>(ctx.benign_updates.size());
    if (tau <= 0.0) throw DegenerateDirectionError("pga_attack: benign updates have zero norm");

    TrainConfig ascent = train_cfg;
    ascent.direction = TrainDirection::ascent;
    const ParamVector poisoned_model = local_train(spec, ctx.global_params, adv_data, ascent, rng);
    const ParamVector raw = vec::sub(poisoned_model, ctx.global_params);
    return project_update(ctx, raw, tau, cfg);
}

} // namespace flsim
