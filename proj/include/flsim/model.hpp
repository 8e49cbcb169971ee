#pragma once

#include <span>
#include <string>
#include <vector>

#include "flsim/data.hpp"
#include "flsim/rng.hpp"
#include "flsim/vec.hpp"

namespace flsim {

enum class Activation { relu, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Fully-connected classifier architecture. layer_sizes holds the input
/// dimension, any hidden widths, and the class count last. Loss is always
/// mean cross-entropy over a softmax of the final layer.
struct ModelSpec {
    std::vector<size_t> layer_sizes;
    Activation activation = Activation::tanh;

    size_t input_dim() const { return layer_sizes.front(); }
    size_t num_classes() const { return layer_sizes.back(); }
    size_t num_layers() const { return layer_sizes.size() - 1; }

    /// Flat parameter count: per layer a (out x in) weight matrix followed by
    /// an out-sized bias, concatenated in layer order.
    size_t param_count() const;

    void validate() const;
    bool operator==(const ModelSpec&) const = default;
};

enum class TrainDirection { descent, ascent };

struct TrainConfig {
    size_t local_epochs = 1;
    size_t batch_size = 1;
    double learning_rate = 0.01;
    TrainDirection direction = TrainDirection::descent;

    bool operator==(const TrainConfig&) const = default;
};

/// Parameters drawn uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)] per
/// layer, weights and biases alike.
ParamVector init_params(const ModelSpec& spec, RngStream rng);

/// Mean cross-entropy loss over the batch plus the exact analytic gradient
/// with respect to params. Throws ConfigError on dimension mismatches and
/// NumericError (naming the layer) if a non-finite value appears.
std::pair<double, ParamVector> loss_and_grad(const ModelSpec& spec, const ParamVector& params,
                                             std::span<const LabeledExample> batch);

double loss_only(const ModelSpec& spec, const ParamVector& params,
                 std::span<const LabeledExample> batch);

/// Class logits for one example.
ParamVector forward_logits(const ModelSpec& spec, const ParamVector& params,
                           const std::vector<double>& features);

/// Softmax probabilities for one example.
ParamVector predict_proba(const ModelSpec& spec, const ParamVector& params,
                          const std::vector<double>& features);

/// Predicted class: argmax of the softmax, lowest index on ties.
size_t predict_class(const ModelSpec& spec, const ParamVector& params,
                     const std::vector<double>& features);

/// E epochs of minibatch SGD (or stochastic gradient ascent) starting from
/// params. The shuffle order is derived from rng alone, so identical inputs
/// produce bit-identical outputs. The input vector is left untouched.
ParamVector local_train(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                        const TrainConfig& cfg, RngStream rng);

/// Difference between the locally trained parameters and the received global
/// parameters.
ParamVector client_update(const ModelSpec& spec, const ParamVector& global_params,
                          const Dataset& data, const TrainConfig& cfg, RngStream rng);

/// Fraction of test examples classified correctly (argmax, lowest index wins
/// ties).
double evaluate(const ModelSpec& spec, const ParamVector& params, const Dataset& test);

} // namespace flsim
