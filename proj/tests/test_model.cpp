#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flsim/model.hpp"
#include "test_support.hpp"

using namespace flsim;

namespace {

Dataset tiny_two_class(size_t n_per_class, RngStream rng) {
    return synth_mixture(2, 4, n_per_class, 3.0, rng);
}

const std::vector<ModelSpec> kSpecMatrix = {
    {{4, 2}, Activation::tanh},          // linear
    {{5, 8, 3}, Activation::relu},
    {{5, 8, 3}, Activation::tanh},
    {{4, 6, 5, 3}, Activation::tanh},
};

Dataset random_batch(const ModelSpec& spec, size_t n, RngStream rng) {
    Dataset ds;
    ds.num_classes = spec.num_classes();
    for (size_t i = 0; i < n; ++i) {
        LabeledExample ex;
        ex.features.resize(spec.input_dim());
        for (double& f : ex.features) f = rng.normal();
        ex.label = rng.uniform_index(ds.num_classes);
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

} // namespace

TEST_CASE("param_count matches the layer layout") {
    ModelSpec spec{{20, 32, 10}, Activation::tanh};
    CHECK(spec.param_count() == 20 * 32 + 32 + 32 * 10 + 10);
    CHECK_THROWS_AS((ModelSpec{{4}, Activation::tanh}.validate()), ConfigError);
    CHECK_THROWS_AS((ModelSpec{{4, 1}, Activation::tanh}.validate()), ConfigError);
}

TEST_CASE("zero-parameter two-class model has loss ln 2") {
    ModelSpec spec{{4, 2}, Activation::tanh};
    ParamVector zeros(spec.param_count(), 0.0);
    Dataset ds = tiny_two_class(5, RngStream(1));
    auto [loss, grad] = loss_and_grad(spec, zeros, ds.examples);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    for (double g : grad) CHECK(std::isfinite(g));
}

TEST_CASE("analytic gradient matches central finite differences") {
    for (const ModelSpec& spec : kSpecMatrix) {
        RngStream rng(100 + spec.layer_sizes.size() * 13 +
                      (spec.activation == Activation::relu ? 1 : 0));
        const Dataset batch = random_batch(spec, 6, rng.derive("batch"));
        for (int point = 0; point < 10; ++point) {
            const ParamVector params = init_params(spec, rng.derive("params", point));
            auto [loss, grad] = loss_and_grad(spec, params, batch.examples);
            (void)loss;
            const ParamVector fd = testsup::fd_gradient(spec, params, batch.examples);
            CHECK(testsup::max_abs_diff(grad, fd) < 1e-5);
        }
    }
}

TEST_CASE("duplicated batch leaves loss and gradient unchanged") {
    ModelSpec spec{{5, 8, 3}, Activation::tanh};
    RngStream rng(17);
    const Dataset batch = random_batch(spec, 4, rng.derive("batch"));
    Dataset doubled = batch;
    doubled.examples.insert(doubled.examples.end(), batch.examples.begin(), batch.examples.end());
    const ParamVector params = init_params(spec, rng.derive("params"));
    auto [l1, g1] = loss_and_grad(spec, params, batch.examples);
    auto [l2, g2] = loss_and_grad(spec, params, doubled.examples);
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-15));
    CHECK(testsup::max_abs_diff(g1, g2) < 1e-14);
}

TEST_CASE("loss_and_grad rejects bad inputs") {
    ModelSpec spec{{4, 2}, Activation::tanh};
    ParamVector params(spec.param_count(), 0.0);
    CHECK_THROWS_AS(loss_and_grad(spec, params, std::span<const LabeledExample>{}), InputError);
    ParamVector short_params(3, 0.0);
    Dataset ds = tiny_two_class(2, RngStream(1));
    CHECK_THROWS_AS(loss_and_grad(spec, short_params, ds.examples), ConfigError);
    LabeledExample bad{{1.0, 2.0}, 0}; // wrong feature dim
    std::vector<LabeledExample> batch{bad};
    CHECK_THROWS_AS(loss_and_grad(spec, params, batch), ConfigError);
    LabeledExample bad_label{{1.0, 2.0, 3.0, 4.0}, 5};
    batch = {bad_label};
    CHECK_THROWS_AS(loss_and_grad(spec, params, batch), InputError);
}

TEST_CASE("non-finite parameters surface as a numeric error naming a layer") {
    ModelSpec spec{{4, 3, 2}, Activation::tanh};
    ParamVector params(spec.param_count(), 0.0);
    params[0] = std::numeric_limits<double>::infinity();
    Dataset ds = tiny_two_class(2, RngStream(1));
    try {
        loss_and_grad(spec, params, ds.examples);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("layer") != std::string::npos);
    }
}

TEST_CASE("full-batch descent reduces loss, ascent raises it") {
    ModelSpec spec{{4, 2}, Activation::tanh};
    RngStream rng(23);
    const Dataset ds = tiny_two_class(10, rng.derive("data"));
    const ParamVector params = init_params(spec, rng.derive("params"));
    const double before = loss_only(spec, params, ds.examples);

    TrainConfig cfg{1, ds.size(), 5e-4, TrainDirection::descent};
    double last = before;
    ParamVector current = params;
    for (int step = 0; step < 20; ++step) {
        current = local_train(spec, current, ds, cfg, rng.derive("t", step));
        const double now = loss_only(spec, current, ds.examples);
        CHECK(now <= last + 1e-12);
        last = now;
    }

    cfg.direction = TrainDirection::ascent;
    current = params;
    last = before;
    for (int step = 0; step < 20; ++step) {
        current = local_train(spec, current, ds, cfg, rng.derive("a", step));
        const double now = loss_only(spec, current, ds.examples);
        CHECK(now >= last - 1e-12);
        last = now;
    }
}

TEST_CASE("zero learning rate returns the input parameters") {
    ModelSpec spec{{4, 2}, Activation::relu};
    RngStream rng(29);
    const Dataset ds = tiny_two_class(6, rng.derive("data"));
    const ParamVector params = init_params(spec, rng.derive("params"));
    TrainConfig cfg{3, 2, 0.0, TrainDirection::descent};
    CHECK(local_train(spec, params, ds, cfg, rng.derive("t")) == params);
    CHECK(client_update(spec, params, ds, cfg, rng.derive("t")) ==
          ParamVector(params.size(), 0.0));
}

TEST_CASE("local_train is deterministic and leaves its input untouched") {
    ModelSpec spec{{5, 8, 3}, Activation::relu};
    RngStream rng(31);
    const Dataset ds = random_batch(spec, 20, rng.derive("data"));
    const ParamVector params = init_params(spec, rng.derive("params"));
    const ParamVector copy = params;
    TrainConfig cfg{2, 5, 0.05, TrainDirection::descent};
    const ParamVector out1 = local_train(spec, params, ds, cfg, rng.derive("t", 7));
    const ParamVector out2 = local_train(spec, params, ds, cfg, rng.derive("t", 7));
    CHECK(out1 == out2); // bit-identical
    CHECK(params == copy);
    CHECK_THROWS_AS(local_train(spec, params, Dataset{{}, 3}, cfg, rng.derive("e")), InputError);
}

TEST_CASE("full-batch training is insensitive to example order") {
    ModelSpec spec{{4, 2}, Activation::tanh};
    RngStream rng(37);
    Dataset ds = tiny_two_class(8, rng.derive("data"));
    Dataset permuted = ds;
    RngStream(99).shuffle(permuted.examples);
    const ParamVector params = init_params(spec, rng.derive("params"));
    TrainConfig cfg{2, ds.size(), 0.01, TrainDirection::descent};
    const ParamVector a = local_train(spec, params, ds, cfg, rng.derive("t", 1));
    const ParamVector b = local_train(spec, params, permuted, cfg, rng.derive("t", 1));
    CHECK(testsup::max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("single full-batch step equals one explicit gradient step") {
    ModelSpec spec{{5, 8, 3}, Activation::tanh};
    RngStream rng(41);
    const Dataset ds = random_batch(spec, 12, rng.derive("data"));
    const ParamVector params = init_params(spec, rng.derive("params"));
    TrainConfig cfg{1, ds.size(), 0.1, TrainDirection::descent};
    const ParamVector update = client_update(spec, params, ds, cfg, rng.derive("t"));
    auto [loss, grad] = loss_and_grad(spec, params, ds.examples);
    (void)loss;
    const ParamVector expected = vec::scaled(grad, -cfg.learning_rate);
    CHECK(testsup::max_abs_diff(update, expected) < 1e-12);
}

TEST_CASE("identical data and streams give identical client updates") {
    ModelSpec spec{{5, 8, 3}, Activation::tanh};
    RngStream rng(43);
    const Dataset ds = random_batch(spec, 15, rng.derive("data"));
    const ParamVector params = init_params(spec, rng.derive("params"));
    TrainConfig cfg{3, 4, 0.05, TrainDirection::descent};
    const ParamVector u1 = client_update(spec, params, ds, cfg, RngStream(5).derive("c"));
    const ParamVector u2 = client_update(spec, params, ds, cfg, RngStream(5).derive("c"));
    CHECK(u1 == u2);
}

TEST_CASE("evaluate scores argmax with lowest-index tie break") {
    ModelSpec spec{{3, 2}, Activation::tanh};
    // Bias strongly toward class 0 regardless of input.
    ParamVector params(spec.param_count(), 0.0);
    params[spec.param_count() - 2] = 5.0; // class-0 bias
    Dataset all_zero;
    all_zero.num_classes = 2;
    for (int i = 0; i < 4; ++i) all_zero.examples.push_back({{0.1 * i, 0.0, 1.0}, 0});
    CHECK(evaluate(spec, params, all_zero) == 1.0);

    // All-zero params: every logit ties, argmax picks class 0.
    ParamVector zeros(spec.param_count(), 0.0);
    Dataset balanced = all_zero;
    balanced.examples[1].label = 1;
    balanced.examples[3].label = 1;
    CHECK(evaluate(spec, zeros, balanced) == 0.5);

    CHECK_THROWS_AS(evaluate(spec, zeros, Dataset{{}, 2}), InputError);
}

TEST_CASE("evaluate matches a hand-scored five-example set") {
    // 1-D linear model, weights chosen by hand: logit_0 = x, logit_1 = -x,
    // so class 0 wins when x > 0 and class 0 also wins ties at x = 0.
    ModelSpec spec{{1, 2}, Activation::tanh};
    ParamVector params = {1.0, -1.0, 0.0, 0.0}; // W = [[1],[-1]], b = 0
    Dataset ds;
    ds.num_classes = 2;
    ds.examples = {
        {{2.0}, 0},  // correct
        {{-1.0}, 1}, // correct
        {{0.5}, 1},  // wrong
        {{0.0}, 0},  // tie -> class 0, correct
        {{-3.0}, 0}, // wrong
    };
    CHECK(evaluate(spec, params, ds) == doctest::Approx(3.0 / 5.0));
}

TEST_CASE("init_params is deterministic and respects the fan-in bound") {
    ModelSpec spec{{20, 32, 10}, Activation::relu};
    const ParamVector a = init_params(spec, RngStream(77).derive("init"));
    const ParamVector b = init_params(spec, RngStream(77).derive("init"));
    CHECK(a == b);
    const double bound0 = 1.0 / std::sqrt(20.0);
    for (size_t i = 0; i < 20 * 32 + 32; ++i) CHECK(std::abs(a[i]) <= bound0);
    const double bound1 = 1.0 / std::sqrt(32.0);
    for (size_t i = 20 * 32 + 32; i < a.size(); ++i) CHECK(std::abs(a[i]) <= bound1);
}
