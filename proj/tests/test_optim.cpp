#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sst/train.hpp"

using namespace sst;

TEST_CASE("zero gradients and zero weight decay leave parameters unchanged") {
    const auto config = oracle::small_config();
    const auto model = oracle::random_model(config, 1);
    const ParamSet zeros = ParamSet::zeros(config);
    OptimizerConfig oc;
    oc.weight_decay = 0.0;

    auto [next, state] = optimizer_step(model, zeros, OptimizerState::init(config), oc);
    auto a = model.params.named_tensors();
    auto b = next.params.named_tensors();
    for (size_t t = 0; t < a.size(); ++t) {
        CHECK(a[t].second->data == b[t].second->data);
    }
    CHECK(state.step == 1);
}

TEST_CASE("one update matches the hand-computed moment arithmetic") {
    OptimizerConfig oc;
    oc.lr = 0.1;
    oc.beta1 = 0.9;
    oc.beta2 = 0.999;
    oc.eps = 1e-8;
    oc.weight_decay = 0.01;

    double p[3] = {1.0, -2.0, 0.5};
    const double g[3] = {0.1, -0.2, 0.3};
    double m[3] = {0.0, 0.0, 0.0};
    double v[3] = {0.0, 0.0, 0.0};
    adamw_update(p, g, m, v, 3, oc, 1);

    // worked by hand for step 1: m = 0.1*g, v = 0.001*g^2, and the bias
    // corrections cancel those same factors, so mhat = g, vhat = g^2.
    for (int i = 0; i < 3; ++i) {
        const double orig = (i == 0) ? 1.0 : (i == 1) ? -2.0 : 0.5;
        const double mhat = g[i];
        const double vhat = g[i] * g[i];
        const double expect =
            orig - 0.1 * (mhat / (std::sqrt(vhat) + 1e-8) + 0.01 * orig);
        CHECK(std::abs(p[i] - expect) <= 1e-12);
        CHECK(std::abs(m[i] - 0.1 * g[i]) <= 1e-12);
        CHECK(std::abs(v[i] - 0.001 * g[i] * g[i]) <= 1e-12);
    }
    // explicit spot value: p0 = 1 - 0.1*(0.1/(0.1+1e-8) + 0.01)
    CHECK(p[0] == doctest::Approx(0.89900001).epsilon(1e-9));
}

TEST_CASE("steps are reproducible and leave the input snapshot untouched") {
    const auto config = oracle::small_config();
    const auto model = oracle::random_model(config, 2);
    const auto before = model.params.wte.data;

    ParamSet grads = ParamSet::zeros(config);
    Rng rng(77);
    for (auto& [name, t] : grads.named_tensors()) {
        for (double& x : t->data) x = 0.01 * rng.normal();
    }
    OptimizerConfig oc;

    auto [n1, s1] = optimizer_step(model, grads, OptimizerState::init(config), oc);
    auto [n2, s2] = optimizer_step(n1, grads, s1, oc);

    auto [m1, t1] = optimizer_step(model, grads, OptimizerState::init(config), oc);
    auto [m2, t2] = optimizer_step(m1, grads, t1, oc);

    CHECK(model.params.wte.data == before);  // input unmodified
    CHECK(s2.step == 2);
    auto a = n2.params.named_tensors();
    auto b = m2.params.named_tensors();
    for (size_t t = 0; t < a.size(); ++t) {
        CHECK(a[t].second->data == b[t].second->data);  // bitwise
    }
}

TEST_CASE("non-finite gradients are rejected") {
    const auto config = oracle::small_config();
    const auto model = oracle::random_model(config, 3);
    ParamSet grads = ParamSet::zeros(config);
    grads.layers[0].wq.data[5] = std::nan("");
    try {
        (void)optimizer_step(model, grads, OptimizerState::init(config), {});
        FAIL("expected NonFiniteGradient");
    } catch (const Error& e) {
        CHECK(e.code() == Err::NonFiniteGradient);
    }

    grads.layers[0].wq.data[5] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(
        (void)optimizer_step(model, grads, OptimizerState::init(config), {}),
        Error);
}

TEST_CASE("weight decay is decoupled from the gradient path") {
    // with zero gradients, the update reduces to pure decay: p *= (1 - lr*wd)
    const auto config = oracle::small_config();
    const auto model = oracle::random_model(config, 4);
    OptimizerConfig oc;
    oc.lr = 0.5;
    oc.weight_decay = 0.1;
    auto [next, state] =
        optimizer_step(model, ParamSet::zeros(config), OptimizerState::init(config), oc);
    auto a = model.params.named_tensors();
    auto b = next.params.named_tensors();
    for (size_t t = 0; t < a.size(); ++t) {
        for (size_t e = 0; e < a[t].second->numel(); ++e) {
            const double expect = a[t].second->data[e] * (1.0 - 0.05);
            CHECK(b[t].second->data[e] ==
                  doctest::Approx(expect).epsilon(1e-12));
        }
    }
}
