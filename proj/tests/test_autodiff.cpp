#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "chaosib/autodiff.hpp"
#include "chaosib/rng.hpp"
#include "test_util.hpp"

using namespace chaosib;
using ad::Graph;
using ad::Tensor;

TEST_CASE("leaky relu values") {
    Graph g;
    auto x = g.input(Tensor::row({-1.0, 2.0, 0.0}));
    const Tensor& y = g.value(g.leaky_relu(x, 0.2));
    CHECK(y.v[0] == -0.2);
    CHECK(y.v[1] == 2.0);
    CHECK(y.v[2] == 0.0);
}

TEST_CASE("gaussian reparameterize with zero noise returns the mean") {
    Graph g;
    auto mu = g.input(Tensor::row({0.3, -1.2}));
    auto lv = g.input(Tensor::row({0.5, -0.7}));
    const Tensor& y = g.value(g.gaussian_reparameterize(mu, lv, Tensor(1, 2)));
    CHECK(y.v[0] == 0.3);
    CHECK(y.v[1] == -1.2);
}

TEST_CASE("softmax cross entropy on uniform logits is ln k") {
    Graph g;
    const std::size_t k = 7;
    auto logits = g.input(Tensor(3, k));
    const Tensor& y = g.value(g.softmax_cross_entropy_with_logits(logits, {0, 3, 6}));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(y.v[i] == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-12));
    }
}

TEST_CASE("backward of sum of squares") {
    Graph g;
    auto x = g.input(Tensor::row({1.0, 2.0}), true);
    auto loss = g.sum(g.square(x));
    CHECK(g.value(loss).v[0] == 5.0);
    g.backward(loss);
    CHECK(g.grad(x).v[0] == 2.0);
    CHECK(g.grad(x).v[1] == 4.0);
}

TEST_CASE("non-scalar loss is rejected") {
    Graph g;
    auto x = g.input(Tensor::row({1.0, 2.0}), true);
    CHECK_THROWS_AS(g.backward(g.square(x)), std::invalid_argument);
}

TEST_CASE("duplicated leaf accumulates both paths") {
    Graph g;
    auto x = g.input(Tensor::row({3.0}), true);
    // loss = x^2 + 2x; dloss/dx = 2x + 2 = 8
    auto loss = g.sum(g.add(g.square(x), g.scale(x, 2.0)));
    g.backward(loss);
    CHECK(g.grad(x).v[0] == doctest::Approx(8.0).epsilon(1e-14));
}

TEST_CASE("linearity of backward") {
    Rng rng(2);
    Tensor xv(1, 5);
    for (auto& e : xv.v) e = rng.uniform(-1, 1);

    auto grads_of = [&xv](double a, double b) {
        Graph g;
        auto x = g.input(xv, true);
        auto l1 = g.sum(g.square(x));
        auto l2 = g.mean(g.exp(x));
        auto loss = g.add(g.scale(l1, a), g.scale(l2, b));
        g.backward(loss);
        return g.grad(x);
    };
    const Tensor g10 = grads_of(1, 0);
    const Tensor g01 = grads_of(0, 1);
    const Tensor gab = grads_of(2.5, -1.5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(gab.v[i] == doctest::Approx(2.5 * g10.v[i] - 1.5 * g01.v[i]).epsilon(1e-12));
    }
}

TEST_CASE("shape mismatch reports both shapes") {
    Graph g;
    auto a = g.input(Tensor(2, 3));
    auto b = g.input(Tensor(2, 3));
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("matmul transpose variants against hand computation") {
    Graph g;
    auto a = g.input(Tensor(2, 3, {1, 2, 3, 4, 5, 6}));
    auto b = g.input(Tensor(2, 3, {7, 8, 9, 10, 11, 12}));
    const Tensor& abt = g.value(g.matmul(a, b, false, true));  // 2x2
    CHECK(abt.at(0, 0) == 1 * 7 + 2 * 8 + 3 * 9);
    CHECK(abt.at(1, 1) == 4 * 10 + 5 * 11 + 6 * 12);
    const Tensor& atb = g.value(g.matmul(a, b, true, false));  // 3x3
    CHECK(atb.at(0, 0) == 1 * 7 + 4 * 10);
    CHECK(atb.at(2, 1) == 3 * 8 + 6 * 11);
}

TEST_CASE("gradient check on randomly assembled graphs") {
    Rng rng(31);
    for (int rep = 0; rep < 8; ++rep) {
        // Two-layer MLP with bias, leaky relu, reparameterized bottleneck,
        // pairwise-distance InfoNCE head and a KL-style penalty: exercises
        // every op the production models use.
        const std::size_t n = 4, in = 5, hid = 6, d = 3;
        Tensor w1(in, hid), b1(1, hid), w2(hid, 2 * d), b2(1, 2 * d);
        Tensor x(n, in), noise(n, d), v(n, d);
        for (auto* t : {&w1, &b1, &w2, &b2, &x, &noise, &v}) {
            for (auto& e : t->v) e = rng.uniform(-1, 1);
        }
        std::vector<ad::Tensor*> params = {&w1, &b1, &w2, &b2};

        auto build = [&](Graph& g, std::vector<Graph::Ref>& prefs) {
            auto xr = g.input(x);
            std::vector<Graph::Ref> pr;
            for (auto* t : params) pr.push_back(g.input(*t, true));
            prefs = pr;
            auto h = g.leaky_relu(g.add_bias(g.matmul(xr, pr[0]), pr[1]), 0.2);
            auto out = g.add_bias(g.matmul(h, pr[2]), pr[3]);
            auto mu = g.slice_cols(out, 0, d);
            auto lv = g.slice_cols(out, d, d);
            auto z = g.gaussian_reparameterize(mu, lv, noise);
            auto vr = g.input(v);
            auto logits = g.scale(g.pairwise_neg_sqdist(z, vr), 1.0 / 0.7);
            std::vector<std::size_t> labels = {0, 1, 2, 3};
            auto nce = g.mean(g.softmax_cross_entropy_with_logits(logits, labels));
            auto klt = g.sub(g.add_scalar(g.add(g.square(mu), g.exp(lv)), -1.0), lv);
            auto kl = g.scale(g.mean(g.row_sum(klt)), 0.5);
            auto extra = g.mean(g.log(g.add_scalar(g.square(z), 1.0)));
            return g.add(g.add(g.scale(kl, 0.3), nce), extra);
        };

        std::vector<Graph::Ref> prefs;
        Graph g;
        auto loss = build(g, prefs);
        g.backward(loss);
        std::vector<const Tensor*> analytic;
        for (auto r : prefs) analytic.push_back(&g.grad(r));

        auto eval = [&]() {
            Graph g2;
            std::vector<Graph::Ref> unused;
            return g2.value(build(g2, unused)).v[0];
        };
        CHECK(testutil::max_gradient_error(eval, params, analytic) <= 1e-4);
    }
}

TEST_CASE("determinism of forward and backward") {
    Rng rng(5);
    Tensor w(4, 4), x(3, 4);
    for (auto* t : {&w, &x}) {
        for (auto& e : t->v) e = rng.uniform(-1, 1);
    }
    auto run = [&]() {
        Graph g;
        auto wr = g.input(w, true);
        auto xr = g.input(x);
        auto loss = g.mean(g.square(g.matmul(xr, wr)));
        g.backward(loss);
        return std::make_pair(g.value(loss).v[0], g.grad(wr));
    };
    const auto [l1, g1] = run();
    const auto [l2, g2] = run();
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor p(2, 2, {1, 2, 3, 4});
    Tensor zero(2, 2);
    ad::Adam adam;
    const Tensor before = p;
    adam.step({&p}, {&zero});
    CHECK(p == before);
}

TEST_CASE("adam: first step moves by about -lr for unit gradient") {
    Tensor p(1, 1, {0.5});
    Tensor grad(1, 1, {1.0});
    ad::Adam adam({.lr = 3e-4});
    adam.step({&p}, {&grad});
    // Bias-corrected moments cancel at t = 1: delta = -lr * 1/(1 + eps adjustment).
    CHECK(p.v[0] == doctest::Approx(0.5 - 3e-4).epsilon(1e-7));
}

TEST_CASE("adam: constant gradient gives monotone, bounded steps") {
    Tensor p(1, 1, {0.0});
    Tensor grad(1, 1, {2.5});
    ad::Adam adam({.lr = 1e-3});
    double prev = p.v[0];
    for (int i = 0; i < 50; ++i) {
        adam.step({&p}, {&grad});
        const double step = p.v[0] - prev;
        CHECK(step < 0.0);
        CHECK(std::abs(step) <= 1e-3 * 1.0001);
        prev = p.v[0];
    }
}

TEST_CASE("adam: shape mismatch is rejected") {
    Tensor p(2, 2);
    Tensor bad(1, 2);
    ad::Adam adam;
    CHECK_THROWS_AS(adam.step({&p}, {&bad}), std::invalid_argument);
}
