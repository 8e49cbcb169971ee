#include "flsim/model.hpp"

#include <algorithm>
#include <cmath>

namespace flsim {

std::string to_string(Activation a) {
    return a == Activation::relu ? "relu" : "tanh";
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation: " + s);
}

size_t ModelSpec::param_count() const {
    size_t total = 0;
    for (size_t l = 1; l < layer_sizes.size(); ++l)
        total += (layer_sizes[l - 1] + 1) * layer_sizes[l];
    return total;
}

void ModelSpec::validate() const {
    if (layer_sizes.size() < 2) throw ConfigError("ModelSpec: need at least input and output sizes");
    for (size_t s : layer_sizes)
        if (s == 0) throw ConfigError("ModelSpec: layer sizes must be positive");
    if (num_classes() < 2) throw ConfigError("ModelSpec: need at least 2 output classes");
}

ParamVector init_params(const ModelSpec& spec, RngStream rng) {
    spec.validate();
    ParamVector params(spec.param_count());
    size_t off = 0;
    for (size_t l = 1; l < spec.layer_sizes.size(); ++l) {
        const size_t fan_in = spec.layer_sizes[l - 1];
        const size_t fan_out = spec.layer_sizes[l];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        const size_t count = (fan_in + 1) * fan_out;
        for (size_t i = 0; i < count; ++i) params[off + i] = (2.0 * rng.uniform() - 1.0) * bound;
        off += count;
    }
    return params;
}

namespace {

// Weights of layer l are a (out x in) row-major block followed by the bias.
struct LayerView {
    const double* w;
    const double* b;
    size_t in, out;
};

std::vector<LayerView> layer_views(const ModelSpec& spec, const ParamVector& params) {
    if (params.size() != spec.param_count())
        throw ConfigError("params dimension " + std::to_string(params.size()) +
                          " does not match spec parameter count " +
                          std::to_string(spec.param_count()));
    std::vector<LayerView> views;
    size_t off = 0;
    for (size_t l = 1; l < spec.layer_sizes.size(); ++l) {
        const size_t in = spec.layer_sizes[l - 1];
        const size_t out = spec.layer_sizes[l];
        views.push_back({params.data() + off, params.data() + off + in * out, in, out});
        off += (in + 1) * out;
    }
    return views;
}

void check_layer_finite(const std::vector<double>& v, size_t layer) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw NumericError("non-finite value in layer " + std::to_string(layer));
    }
}

// Forward pass keeping pre- and post-activation values for backprop.
// activations[0] is the input; zs[l] is layer l's pre-activation.
void forward_pass(const ModelSpec& spec, const std::vector<LayerView>& layers,
                  const std::vector<double>& x, std::vector<std::vector<double>>& zs,
                  std::vector<std::vector<double>>& activations) {
    if (x.size() != spec.input_dim())
        throw ConfigError("feature dimension " + std::to_string(x.size()) +
                          " does not match model input " + std::to_string(spec.input_dim()));
    const size_t L = layers.size();
    zs.assign(L, {});
    activations.assign(L + 1, {});
    activations[0] = x;
    for (size_t l = 0; l < L; ++l) {
        const LayerView& lv = layers[l];
        std::vector<double> z(lv.out);
        const std::vector<double>& a = activations[l];
        for (size_t o = 0; o < lv.out; ++o) {
            double s = lv.b[o];
            const double* row = lv.w + o * lv.in;
            for (size_t i = 0; i < lv.in; ++i) s += row[i] * a[i];
            z[o] = s;
        }
        check_layer_finite(z, l + 1);
        zs[l] = z;
        if (l + 1 < L) {
            std::vector<double> act(lv.out);
            if (spec.activation == Activation::relu) {
                for (size_t o = 0; o < lv.out; ++o) act[o] = z[o] > 0.0 ? z[o] : 0.0;
            } else {
                for (size_t o = 0; o < lv.out; ++o) act[o] = std::tanh(z[o]);
            }
            activations[l + 1] = std::move(act);
        } else {
            activations[l + 1] = std::move(z);
        }
    }
}

// log(sum(exp(z))) with max subtraction; finite for any finite logits.
double log_sum_exp(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

std::vector<double> softmax(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double s = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        s += p[i];
    }
    for (double& v : p) v /= s;
    return p;
}

size_t argmax_lowest(const std::vector<double>& v) {
    size_t best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

} // namespace

std::pair<double, ParamVector> loss_and_grad(const ModelSpec& spec, const ParamVector& params,
                                             std::span<const LabeledExample> batch) {
    if (batch.empty()) throw InputError("loss_and_grad: empty batch");
    const auto layers = layer_views(spec, params);
    const size_t L = layers.size();
    const size_t C = spec.num_classes();

    double loss = 0.0;
    ParamVector grad(params.size(), 0.0);
    std::vector<std::vector<double>> zs, acts;

    for (const LabeledExample& ex : batch) {
        if (ex.label >= C)
            throw InputError("loss_and_grad: label " + std::to_string(ex.label) +
                             " out of range for " + std::to_string(C) + " classes");
        forward_pass(spec, layers, ex.features, zs, acts);

        const std::vector<double>& logits = zs[L - 1];
        loss += log_sum_exp(logits) - logits[ex.label];

        // delta starts as softmax(logits) - onehot and is pushed backwards.
        std::vector<double> delta = softmax(logits);
        delta[ex.label] -= 1.0;

        size_t off_end = params.size();
        for (size_t l = L; l-- > 0;) {
            const LayerView& lv = layers[l];
            const size_t block = (lv.in + 1) * lv.out;
            const size_t off = off_end - block;
            const std::vector<double>& a_in = acts[l];
            double* gw = grad.data() + off;
            double* gb = grad.data() + off + lv.in * lv.out;
            for (size_t o = 0; o < lv.out; ++o) {
                const double d = delta[o];
                if (d != 0.0) {
                    double* row = gw + o * lv.in;
                    for (size_t i = 0; i < lv.in; ++i) row[i] += d * a_in[i];
                }
                gb[o] += d;
            }
            if (l > 0) {
                std::vector<double> prev(lv.in, 0.0);
                for (size_t o = 0; o < lv.out; ++o) {
                    const double d = delta[o];
                    if (d == 0.0) continue;
                    const double* row = lv.w + o * lv.in;
                    for (size_t i = 0; i < lv.in; ++i) prev[i] += d * row[i];
                }
                const std::vector<double>& z_prev = zs[l - 1];
                if (spec.activation == Activation::relu) {
                    for (size_t i = 0; i < lv.in; ++i)
                        if (z_prev[i] <= 0.0) prev[i] = 0.0;
                } else {
                    for (size_t i = 0; i < lv.in; ++i) {
                        const double t = std::tanh(z_prev[i]);
                        prev[i] *= 1.0 - t * t;
                    }
                }
                delta = std::move(prev);
            }
            off_end = off;
        }
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    loss *= inv;
    for (double& g : grad) g *= inv;
    if (!std::isfinite(loss)) throw NumericError("loss_and_grad: non-finite loss");
    vec::check_finite(grad, "loss_and_grad gradient");
    return {loss, std::move(grad)};
}

double loss_only(const ModelSpec& spec, const ParamVector& params,
                 std::span<const LabeledExample> batch) {
    if (batch.empty()) throw InputError("loss_only: empty batch");
    const auto layers = layer_views(spec, params);
    const size_t C = spec.num_classes();
    double loss = 0.0;
    std::vector<std::vector<double>> zs, acts;
    for (const LabeledExample& ex : batch) {
        if (ex.label >= C) throw InputError("loss_only: label out of range");
        forward_pass(spec, layers, ex.features, zs, acts);
        const std::vector<double>& logits = zs.back();
        loss += log_sum_exp(logits) - logits[ex.label];
    }
    return loss / static_cast<double>(batch.size());
}

ParamVector forward_logits(const ModelSpec& spec, const ParamVector& params,
                           const std::vector<double>& features) {
    const auto layers = layer_views(spec, params);
    std::vector<std::vector<double>> zs, acts;
    forward_pass(spec, layers, features, zs, acts);
    return zs.back();
}

ParamVector predict_proba(const ModelSpec& spec, const ParamVector& params,
                          const std::vector<double>& features) {
    return softmax(forward_logits(spec, params, features));
}

size_t predict_class(const ModelSpec& spec, const ParamVector& params,
                     const std::vector<double>& features) {
    return argmax_lowest(forward_logits(spec, params, features));
}

ParamVector local_train(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                        const TrainConfig& cfg, RngStream rng) {
    if (data.empty()) throw InputError("local_train: empty dataset");
    if (cfg.local_epochs < 1 || cfg.batch_size < 1)
        throw ConfigError("local_train: epochs and batch size must be at least 1");
    if (cfg.learning_rate < 0.0) throw ConfigError("local_train: negative learning rate");

    const double step = cfg.direction == TrainDirection::descent ? -cfg.learning_rate
                                                                 : cfg.learning_rate;
    ParamVector current = params;
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<LabeledExample> batch;
    batch.reserve(std::min<size_t>(cfg.batch_size, data.size()));

    for (size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            for (size_t i = start; i < end; ++i) batch.push_back(data.examples[order[i]]);
            auto [loss, grad] = loss_and_grad(spec, current, batch);
            (void)loss;
            vec::axpy(current, step, grad);
        }
    }
    vec::check_finite(current, "local_train result");
    return current;
}

ParamVector client_update(const ModelSpec& spec, const ParamVector& global_params,
                          const Dataset& data, const TrainConfig& cfg, RngStream rng) {
    return vec::sub(local_train(spec, global_params, data, cfg, std::move(rng)), global_params);
}

double evaluate(const ModelSpec& spec, const ParamVector& params, const Dataset& test) {
    if (test.empty()) throw InputError("evaluate: empty test set");
    const auto layers = layer_views(spec, params);
    std::vector<std::vector<double>> zs, acts;
    size_t correct = 0;
    for (const LabeledExample& ex : test.examples) {
        forward_pass(spec, layers, ex.features, zs, acts);
        if (argmax_lowest(zs.back()) == ex.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

} // namespace flsim
