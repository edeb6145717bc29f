#include <cmath>
#include <vector>

#include "dbr/common.hpp"
#include "dbr/optim.hpp"
#include "doctest.h"

using namespace dbr;

namespace {

ParamStore make_store(const std::vector<double>& init) {
    ParamStore store;
    Param& p = store.add("p", {static_cast<int>(init.size())});
    p.value = init;
    return store;
}

}  // namespace

TEST_CASE("optimizer kind parsing round-trips") {
    CHECK(optimizer_kind_from_string("sgd") == OptimizerKind::Sgd);
    CHECK(optimizer_kind_from_string("momentum") == OptimizerKind::Momentum);
    CHECK(optimizer_kind_from_string("adam") == OptimizerKind::Adam);
    CHECK(to_string(OptimizerKind::Adam) == "adam");
    CHECK_THROWS_AS(optimizer_kind_from_string("adamw"), ConfigError);
}

TEST_CASE("sgd is w -= lr * g") {
    ParamStore store = make_store({1.0, -2.0, 3.0});
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::Sgd;
    cfg.lr = 0.1;
    Optimizer opt(cfg, store.total_size());
    opt.step(store, std::vector<double>{1.0, 2.0, -4.0});
    CHECK(store.find("p")->value == std::vector<double>{0.9, -2.2, 3.4});
    CHECK(opt.step_count() == 1);
}

TEST_CASE("momentum matches the hand recurrence over several steps") {
    ParamStore store = make_store({0.5, -0.25});
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::Momentum;
    cfg.lr = 0.05;
    cfg.momentum = 0.9;
    Optimizer opt(cfg, store.total_size());

    std::vector<double> w = {0.5, -0.25};
    std::vector<double> m = {0.0, 0.0};
    Rng rng(mix_seed(7, "momentum"));
    for (int step = 0; step < 25; ++step) {
        std::vector<double> g = {rng.symmetric(1.0), rng.symmetric(1.0)};
        opt.step(store, g);
        for (int i = 0; i < 2; ++i) {
            m[i] = cfg.momentum * m[i] + g[i];
            w[i] -= cfg.lr * m[i];
        }
    }
    for (int i = 0; i < 2; ++i)
        CHECK(store.find("p")->value[i] == doctest::Approx(w[i]).epsilon(1e-15));
}

TEST_CASE("adam matches a hand-rolled reference for 100 steps") {
    ParamStore store = make_store({0.3, -1.2, 0.0, 2.5});
    OptimizerConfig cfg;  // defaults: adam, lr 1e-3, betas 0.9/0.999, eps 1e-8
    Optimizer opt(cfg, store.total_size());

    std::vector<double> w = store.find("p")->value;
    std::vector<double> m(4, 0.0), v(4, 0.0);
    Rng rng(mix_seed(7, "adam"));
    for (int step = 1; step <= 100; ++step) {
        std::vector<double> g(4);
        for (double& gi : g) gi = rng.symmetric(2.0);
        opt.step(store, g);
        const double bc1 = 1.0 - std::pow(cfg.beta1, step);
        const double bc2 = 1.0 - std::pow(cfg.beta2, step);
        for (int i = 0; i < 4; ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            w[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
        }
    }
    CHECK(opt.step_count() == 100);
    for (int i = 0; i < 4; ++i)
        CHECK(std::abs(store.find("p")->value[i] - w[i]) <= 1e-12);
}

TEST_CASE("adam bias correction makes the first step lr-sized") {
    ParamStore store = make_store({0.0});
    OptimizerConfig cfg;
    cfg.lr = 0.01;
    Optimizer opt(cfg, store.total_size());
    opt.step(store, std::vector<double>{0.5});
    // mhat = g, vhat = g^2 -> update = lr * g / (|g| + eps) ~= lr * sign(g)
    CHECK(store.find("p")->value[0] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("multi-parameter stores update at the right offsets") {
    ParamStore store;
    Param& a = store.add("a", {2});
    Param& b = store.add("b", {3});
    a.value = {1.0, 1.0};
    b.value = {2.0, 2.0, 2.0};
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::Sgd;
    cfg.lr = 1.0;
    Optimizer opt(cfg, store.total_size());
    opt.step(store, std::vector<double>{1, 2, 3, 4, 5});
    CHECK(a.value == std::vector<double>{0.0, -1.0});
    CHECK(b.value == std::vector<double>{-1.0, -2.0, -3.0});
}

TEST_CASE("non-finite gradients are rejected and name the parameter") {
    ParamStore store;
    store.add("weights", {2}).value = {0.0, 0.0};
    store.add("bias", {1}).value = {0.0};
    Optimizer opt(OptimizerConfig{}, store.total_size());
    std::vector<double> g = {0.0, 0.0, std::nan("")};
    CHECK_THROWS_WITH_AS(opt.step(store, g), doctest::Contains("bias"), std::runtime_error);
    // The failed step must not count or mutate values.
    CHECK(opt.step_count() == 0);
    CHECK(store.find("weights")->value == std::vector<double>{0.0, 0.0});
}

TEST_CASE("gradient size mismatch is rejected") {
    ParamStore store = make_store({1.0, 2.0});
    Optimizer opt(OptimizerConfig{}, store.total_size());
    CHECK_THROWS_AS(opt.step(store, std::vector<double>{1.0}), std::invalid_argument);
}
