#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flsim/aggregation.hpp"
#include "flsim/model.hpp"

namespace flsim {

/// Everything the whitebox online adversary sees in a round: the current
/// global parameters, the benign updates available to it (computed from the
/// compromised clients' own benign data), how many poisoned copies it will
/// submit, and the server's rule.
struct MpaContext {
    ParamVector global_params;
    std::vector<ParamVector> benign_updates;
    size_t m = 1;
    AggregationRule target_rule;
};

/// Scaling-factor search range: the grid runs over [1, gamma_max] in steps of
/// gamma_step (attack-specific grids may start at gamma_step instead).
struct ProjectConfig {
    double gamma_max = 50.0;
    double gamma_step = 0.5;
};

enum class OmegaKind { inv_unit, inv_std, inv_sign };

std::string to_string(OmegaKind k);
OmegaKind omega_kind_from_string(const std::string& s);

/// || benign aggregate - poisoned aggregate ||_2 where the poisoned aggregate
/// feeds m copies of `poisoned` ahead of the benign updates into the target
/// rule. This is the quantity every attack below maximizes.
double deviation(const MpaContext& ctx, const ParamVector& poisoned);

/// Mean of benign updates plus z times their per-dimension population
/// standard deviation. When z is not given it is computed from the
/// inverse-normal quantile of the colluding/total client ratio.
ParamVector lie_attack(const MpaContext& ctx, std::optional<double> z = std::nullopt);

/// The z used by lie_attack when none is supplied, for n total and m
/// compromised updates.
double default_lie_z(size_t n_total, size_t m);

/// Static inverse-sign direction, magnitude chosen from the grid
/// {step, 2*step, ...} <= gamma_max to maximize deviation. Against multi_krum
/// only magnitudes whose m copies are all selected are admissible; nullopt
/// means no admissible magnitude exists.
std::optional<ParamVector> stat_opt_attack(const MpaContext& ctx, const ProjectConfig& cfg);

/// Benign mean plus gamma* times a data-dependent direction. Against
/// multi_krum gamma* is the largest admissible grid value (0 when none is,
/// returning the benign mean); against the other rules it is the
/// deviation-maximizing grid point.
ParamVector dyn_opt_attack(const MpaContext& ctx, const ProjectConfig& cfg, OmegaKind omega);

/// Rescales raw to norm tau, then picks the scaling on the grid
/// {1, 1+step, ..., gamma_max} that maximizes deviation. Specializations:
/// average multiplies by 1e20 outright, norm_bound returns the tau-norm
/// vector unscaled, multi_krum takes the largest scaling whose m copies are
/// all selected (nullopt when none is).
std::optional<ParamVector> project_update(const MpaContext& ctx, const ParamVector& raw,
                                          double tau, const ProjectConfig& cfg);

/// Gradient-ascent model poisoning: fine-tunes the global model on the
/// adversary's data with ascent steps, takes the parameter difference as the
/// raw poisoned update, and projects it for the target rule. tau is the mean
/// norm of the benign updates in ctx.
std::optional<ParamVector> pga_attack(const MpaContext& ctx, const ModelSpec& spec,
                                      const Dataset& adv_data, const TrainConfig& train_cfg,
                                      const ProjectConfig& cfg, RngStream rng);

/// Inverse standard-normal CDF (rational approximation plus one Halley
/// refinement; absolute error well below 1e-9). p must lie in (0, 1).
double inverse_normal_cdf(double p);

} // namespace flsim
