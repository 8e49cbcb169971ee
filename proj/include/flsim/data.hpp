#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "flsim/rng.hpp"
#include "flsim/vec.hpp"

namespace flsim {

struct ModelSpec; // model.hpp

struct LabeledExample {
    std::vector<double> features;
    size_t label = 0;

    bool operator==(const LabeledExample&) const = default;
};

struct Dataset {
    std::vector<LabeledExample> examples;
    size_t num_classes = 0;

    size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
    size_t feature_dim() const { return examples.empty() ? 0 : examples[0].features.size(); }

    bool operator==(const Dataset&) const = default;
};

/// Per-client shards of a source dataset. Shards are disjoint index sets over
/// the source; sizes sum to the source size.
struct Partition {
    std::vector<Dataset> shards;
};

/// Validates the dataset invariants (uniform feature dimension, labels below
/// num_classes). Throws InputError on violation.
void validate_dataset(const Dataset& ds, const char* where);

/// Non-iid partition: for each class, per-client proportions are drawn from
/// Dirichlet(alpha * 1_N) and the class examples are assigned by those
/// proportions with largest-remainder rounding, so every example lands in
/// exactly one shard.
Partition dirichlet_partition(const Dataset& src, size_t n_clients, double alpha, RngStream rng);

/// Static label flip: y -> C-1-y for even C, y -> (C-y) mod C for odd C.
/// The odd rule leaves y=0 in place; that is deliberate.
Dataset flip_static(const Dataset& ds);

/// Dynamic label flip: each label becomes the surrogate's least probable
/// class for the example's features (lowest index on ties).
Dataset flip_dynamic(const Dataset& ds, const ModelSpec& surrogate_spec,
                     const ParamVector& surrogate_params);

enum class Rounding { none, round_to_int };

/// Grows ds to target_size by adding noisy copies: each new example is a
/// uniformly chosen base example with iid N(0, noise_sigma^2) added per
/// feature (optionally rounded to integers), keeping the base label.
Dataset augment_gaussian(const Dataset& ds, double noise_sigma, size_t target_size, RngStream rng,
                         Rounding rounding = Rounding::none);

/// 0.05 x the mean per-feature standard deviation of ds; the default noise
/// scale for augmentation.
double default_noise_sigma(const Dataset& ds);

/// C Gaussian clusters with unit covariance and means at mutually distinct
/// points of norm `separation`. Mean placement is a fixed function of
/// (C, dim, separation): opposing basis directions while C <= 2*dim, a circle
/// in the first two coordinates otherwise (evenly spaced points on
/// [-separation, separation] in the 1-D case).
Dataset synth_mixture(size_t num_classes, size_t dim, size_t per_class, double separation,
                      RngStream rng);

/// IDX image/label pair (big-endian, magics 0x00000803 / 0x00000801); pixels
/// scaled to [0,1]. Errors name the offending byte offset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Comma-separated numeric rows, no quoting; label_column holds a
/// non-negative integer class. Errors name the offending row.
Dataset load_csv(const std::string& path, size_t label_column, bool has_header = false);

uint64_t dataset_fingerprint(const Dataset& ds);

} // namespace flsim
