#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "kprnet/errors.hpp"
#include "kprnet/kitti_io.hpp"
#include "kprnet/kpconv.hpp"
#include "kprnet/train.hpp"

using namespace kpr;

TEST_CASE("cross entropy: uniform logits give ln(19)") {
    Tensor logits{4, 19};
    std::vector<std::uint8_t> targets = {0, 5, 18, 7};
    auto [loss, grad] = cross_entropy(logits, targets);
    CHECK(loss == doctest::Approx(std::log(19.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy: ignore points contribute nothing") {
    Tensor logits{3, 19};
    logits(0, 2) = 5.0;
    auto [loss, grad] = cross_entropy(
        logits, {kIgnoreLabel, kIgnoreLabel, kIgnoreLabel});
    CHECK(loss == 0.0);
    for (std::size_t i = 0; i < grad.size(); ++i) CHECK(grad[i] == 0.0);

    // mixed batch: denominator counts only the labeled point
    auto [mixed_loss, mixed_grad] = cross_entropy(logits, {2, kIgnoreLabel, kIgnoreLabel});
    Tensor solo{1, 19};
    solo(0, 2) = 5.0;
    auto [solo_loss, solo_grad] = cross_entropy(solo, {2});
    CHECK(mixed_loss == doctest::Approx(solo_loss).epsilon(1e-14));
    for (std::size_t k = 0; k < 19; ++k) CHECK(mixed_grad(0, k) == solo_grad(0, k));
    for (std::size_t k = 0; k < 19; ++k) CHECK(mixed_grad(1, k) == 0.0);
}

TEST_CASE("cross entropy is shift invariant per point") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> dist(-3, 3);
    Tensor logits{5, 19};
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = dist(rng);
    std::vector<std::uint8_t> targets = {1, 4, kIgnoreLabel, 18, 0};
    auto [loss_a, grad_a] = cross_entropy(logits, targets);
    Tensor shifted = logits;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t k = 0; k < 19; ++k) shifted(i, k) += 17.0 * (double(i) + 1.0);
    auto [loss_b, grad_b] = cross_entropy(shifted, targets);
    CHECK(loss_a == doctest::Approx(loss_b).epsilon(1e-12));
    for (std::size_t i = 0; i < grad_a.size(); ++i)
        CHECK(grad_a[i] == doctest::Approx(grad_b[i]).epsilon(1e-12));
}

TEST_CASE("cross entropy gradient matches finite differences") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-2, 2);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 3 + int(rng() % 4);
        Tensor logits{static_cast<std::size_t>(n), 19};
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = dist(rng);
        std::vector<std::uint8_t> targets;
        for (int i = 0; i < n; ++i)
            targets.push_back(rng() % 5 == 0 ? kIgnoreLabel
                                             : static_cast<std::uint8_t>(rng() % 19));
        auto [loss, grad] = cross_entropy(logits, targets);
        const double h = 1e-6;
        for (int probe = 0; probe < 25; ++probe) {
            std::size_t j = rng() % logits.size();
            Tensor plus = logits, minus = logits;
            plus[j] += h;
            minus[j] -= h;
            double fd = (cross_entropy(plus, targets).first -
                         cross_entropy(minus, targets).first) /
                        (2 * h);
            CHECK(grad[j] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("cross entropy rejects malformed input") {
    Tensor logits{2, 19};
    CHECK_THROWS_AS(cross_entropy(logits, {0}), ArgumentError);
    CHECK_THROWS_AS(cross_entropy(logits, {0, 19}), ArgumentError);
}

TEST_CASE("learning-rate schedule closed forms") {
    TrainConfig cfg;  // base_lr 0.01875, warmup 1000
    long total = 10000;
    CHECK(lr_at(0, total, cfg) == 0.0);
    CHECK(lr_at(1000, total, cfg) == 0.01875);
    CHECK(lr_at(500, total, cfg) == doctest::Approx(0.01875 / 2).epsilon(1e-15));
    long mid = 1000 + (total - 1000) / 2;
    CHECK(lr_at(mid, total, cfg) == doctest::Approx(0.009375).epsilon(1e-15));
    CHECK(lr_at(total, total, cfg) == doctest::Approx(0.0).epsilon(1e-15));

    // continuity at the warmup boundary
    double before = lr_at(999, total, cfg);
    double after = lr_at(1000, total, cfg);
    CHECK(std::abs(after - before) <= cfg.base_lr / cfg.warmup_iters + 1e-12);

    // non-increasing after warmup
    double prev = lr_at(1000, total, cfg);
    for (long s = 1001; s <= total; s += 97) {
        double lr = lr_at(s, total, cfg);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }

    CHECK_THROWS_AS(lr_at(-1, total, cfg), ArgumentError);
    CHECK_THROWS_AS(lr_at(total + 1, total, cfg), ArgumentError);
    CHECK_THROWS_AS(lr_at(0, 500, cfg), ArgumentError);  // total <= warmup
}

TEST_CASE("sgd: zero gradients leave parameters unchanged") {
    Param p;
    p.name = "p";
    p.value = Tensor{3};
    p.value.fill(2.0);
    p.zero_grad();
    p.decay = false;
    SGD opt(0.9, 0.0);
    opt.step({&p}, 0.1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(p.value[i] == 2.0);
}

TEST_CASE("sgd reproduces the hand-computed momentum recurrence") {
    Param p;
    p.name = "p";
    p.value = Tensor{1};
    p.value[0] = 1.0;
    p.decay = false;
    p.zero_grad();
    p.grad[0] = 1.0;
    SGD opt(0.9, 0.0);
    opt.step({&p}, 0.1);
    CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-15));
    p.grad[0] = 1.0;
    opt.step({&p}, 0.1);  // buf = 0.9*1 + 1 = 1.9; p = 0.9 - 0.19
    CHECK(p.value[0] == doctest::Approx(0.71).epsilon(1e-15));
}

TEST_CASE("weight decay skips zero values, non-decay and frozen params") {
    Param zero, frozen, nodecay;
    for (Param* p : {&zero, &frozen, &nodecay}) {
        p->value = Tensor{1};
        p->zero_grad();
    }
    zero.value[0] = 0.0;
    frozen.value[0] = 3.0;
    frozen.trainable = false;
    nodecay.value[0] = 3.0;
    nodecay.decay = false;

    SGD with_wd(0.0, 1e-4), without(0.0, 0.0);
    Param zero_ref = zero;
    with_wd.step({&zero, &frozen, &nodecay}, 0.5);
    without.step({&zero_ref}, 0.5);
    CHECK(zero.value[0] == zero_ref.value[0]);  // decay of zero is zero
    CHECK(frozen.value[0] == 3.0);
    CHECK(nodecay.value[0] == 3.0);

    Param decayed;
    decayed.value = Tensor{1};
    decayed.value[0] = 3.0;
    decayed.zero_grad();
    SGD opt(0.0, 1e-4);
    opt.step({&decayed}, 0.5);
    CHECK(decayed.value[0] == doctest::Approx(3.0 - 0.5 * 1e-4 * 3.0).epsilon(1e-15));
}

TEST_CASE("sgd with lr 0 is the identity on parameters") {
    Param p;
    p.value = Tensor{2};
    p.value.fill(1.5);
    p.zero_grad();
    p.grad.fill(2.0);
    SGD opt(0.9, 1e-4);
    opt.step({&p}, 0.0);
    for (std::size_t i = 0; i < 2; ++i) CHECK(p.value[i] == 1.5);
    // but buffers did update: a later nonzero-lr step moves further
    p.grad.fill(0.0);
    opt.step({&p}, 1.0);
    CHECK(p.value[0] < 1.5);
}

TEST_CASE("training only the point branch still reduces loss on fixed features") {
    // frozen 2D features stand in for a frozen net2d
    std::mt19937_64 rng(11);
    const int n = 120, cin = 8;
    std::uniform_real_distribution<double> coord(-2.0, 2.0);
    std::vector<double> xyz;
    std::vector<std::uint8_t> labels;
    Tensor features{n, cin};
    for (int i = 0; i < n; ++i) {
        double x = coord(rng), y = coord(rng), z = 0.1 * coord(rng);
        xyz.insert(xyz.end(), {x, y, z});
        std::uint8_t cls = x > 0 ? 1 : 0;
        labels.push_back(cls);
        for (int k = 0; k < cin; ++k)
            features(i, k) = 0.5 * coord(rng) + (cls ? 0.8 : -0.8);
    }

    KPConvConfig cfg;
    cfg.in_channels = cin;
    cfg.out_channels = 16;
    cfg.num_kernel_points = 5;
    KPConvLayer layer(cfg, 3);
    NeighborLists neighbors = radius_neighbors(xyz, cfg.radius);

    SGD opt(0.9, 0.0);
    std::vector<double> losses;
    for (int step = 0; step < 60; ++step) {
        layer.zero_grad();
        Tensor out = layer.forward(features, xyz, neighbors);
        Tensor logits = layer.head_forward(out, true);
        auto [loss, grad] = cross_entropy(logits, labels);
        layer.backward(layer.head_backward(grad));
        opt.step(layer.params(), 0.05);
        losses.push_back(loss);
    }
    double first = (losses[0] + losses[1] + losses[2]) / 3;
    double last = (losses[57] + losses[58] + losses[59]) / 3;
    CHECK(last < first);
    CHECK(last < 0.5 * first);
}
