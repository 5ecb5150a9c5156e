#include "cban/training.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace cban;
using namespace cban::testing;

namespace {

Batch random_batch(const ArchSpec& a, Index n, Rng& rng, double p_observed = 0.5) {
    const Shape shape = a.layers[0].batched_shape(n);
    return {uniform_tensor(shape, rng, -0.95, 0.95), random_mask(shape, rng, p_observed)};
}

TrainConfig unroll_config(LossKind loss, int sweeps) {
    TrainConfig cfg;
    cfg.loss = loss;
    cfg.theta = 1e-14;  // never converges early, so every item runs all sweeps
    cfg.max_iters = sweeps;
    return cfg;
}

/// Worst relative error of td1_gradient against finite differences of td1_loss.
double td1_gradient_error(WeightBundle w, const ArchSpec& a, const Batch& batch, const TrainConfig& cfg) {
    const TD1Gradient g = td1_gradient(w, a, batch, cfg);
    auto params = parameters(w);
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor numeric = finite_difference([&] { return td1_loss(w, a, batch, cfg); }, *params[k]);
        worst = std::max(worst, worst_gradient_error(g.grads[k], numeric));
    }
    return worst;
}

ArchSpec small_conv_arch() {
    ArchSpec a;
    a.layers = {LayerSpec::conv(1, 4, 4, false, LayerRole::Visible), LayerSpec::conv(2, 4, 4),
                LayerSpec::conv(1, 2, 2, true)};
    a.kernel_sizes = {3, 3};
    return a;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("unclamped visible examples") {
    ArchSpec a = ArchSpec::fully_connected({1, 1});
    WeightBundle w = zero_weights(a);
    NetState s = initial_state(a, 1);
    CHECK(unclamped_visible(s, w, a) == Tensor({1, 1}));
    w.forward[0] = Tensor({1, 1}, {2.0});
    s.activations[1] = Tensor({1, 1}, {0.5});
    CHECK(unclamped_visible(s, w, a)[0] == doctest::Approx(0.7615941559557649).epsilon(1e-15));

    Rng rng(2);
    ArchSpec b = ArchSpec::fully_connected({5, 3});
    const WeightBundle v = random_weights(b, rng, 1.0);
    const NetState r = random_state(b, rng, 2);
    CHECK(unclamped_visible(r, v, b) == update_layer(r, v, b, 0).activations[0]);
}

TEST_CASE("loss examples") {
    CHECK(loss_se(Tensor({2}, {0.0, 0.0}), Tensor({2}, {0.6, -0.8})) == doctest::Approx(1.0));
    CHECK(loss_se(Tensor({2}, {0.3, 0.1}), Tensor({2}, {0.3, 0.1})) == 0.0);
    CHECK_THROWS_AS(loss_se(Tensor({2}), Tensor({3})), ShapeError);

    const auto t = ActivationKind::tanh();
    ContrastivePair p{Tensor({1}, {0.5}), Tensor({1}, {0.0}), {}};
    CHECK(loss_delta_e(p, t) == doctest::Approx(0.13081203594113697).epsilon(1e-14));
    ContrastivePair same{Tensor({3}, {0.1, -0.2, 0.7}), Tensor({3}, {0.1, -0.2, 0.7}), {}};
    CHECK(loss_delta_e(same, t) == 0.0);
    CHECK(loss_delta_e_plus(same, t) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
}

TEST_CASE("loss_delta_e vanishes only when the read-out matches") {
    Rng rng(3);
    for (const auto& kind : {ActivationKind::tanh(), ActivationKind::leaky_sigmoid(0.3)}) {
        for (int trial = 0; trial < 50; ++trial) {
            const Tensor y = uniform_tensor({6}, rng, -0.9, 0.9);
            Tensor v = uniform_tensor({6}, rng, -0.9, 0.9);
            CHECK(loss_delta_e({y, y, {}}, kind) == doctest::Approx(0.0));
            // Convex barrier: strictly positive away from equality.
            CHECK(loss_delta_e({y, v, {}}, kind) > 1e-9);
        }
    }
}

TEST_CASE("loss_delta_e equals the energy difference of the contrastive states") {
    Rng rng(5);
    for (const auto& units : {std::vector<Index>{6, 4}, std::vector<Index>{5, 4, 3}}) {
        for (const auto& kind : {ActivationKind::tanh(), ActivationKind::leaky_sigmoid(0.2)}) {
            const ArchSpec a = ArchSpec::fully_connected(units, kind);
            for (int trial = 0; trial < 20; ++trial) {
                const WeightBundle w = random_weights(a, rng, 0.5, 0.3);
                NetState clamped = random_state(a, rng, 1);
                const Tensor y = uniform_tensor({1, units[0]}, rng, -0.95, 0.95);
                clamped.activations[0] = y;
                NetState free = clamped;
                free.activations[0] = unclamped_visible(clamped, w, a);
                const ContrastivePair pair{y, free.activations[0], {}};
                const double diff = energy(clamped, w, a) - energy(free, w, a);
                CHECK(std::abs(loss_delta_e(pair, kind) - diff) < 1e-10);
                CHECK(std::abs(loss_delta_e_plus(pair, kind) - softplus(loss_delta_e(pair, kind))) < 1e-12);
            }
        }
    }
}

TEST_CASE("softplus branches") {
    CHECK(softplus(100.0) == 100.0);
    CHECK(softplus(30.5) == 30.5);
    CHECK(softplus(-50.0) == doctest::Approx(std::exp(-50.0)).epsilon(1e-12));
    CHECK(softplus(1.0) == doctest::Approx(std::log1p(std::exp(1.0))).epsilon(1e-15));
}

TEST_CASE("losses treat every visible unit alike") {
    Rng rng(6);
    const Tensor y = uniform_tensor({8}, rng, -0.9, 0.9);
    const Tensor v = uniform_tensor({8}, rng, -0.9, 0.9);
    const std::vector<Index> perm{3, 7, 0, 5, 1, 6, 2, 4};
    Tensor yp({8}), vp({8});
    for (Index i = 0; i < 8; ++i) {
        yp[i] = y[perm[static_cast<std::size_t>(i)]];
        vp[i] = v[perm[static_cast<std::size_t>(i)]];
    }
    const auto t = ActivationKind::tanh();
    CHECK(loss_se(vp, yp) == doctest::Approx(loss_se(v, y)).epsilon(1e-14));
    CHECK(loss_delta_e({yp, vp, {}}, t) == doctest::Approx(loss_delta_e({y, v, {}}, t)).epsilon(1e-14));
}

TEST_CASE("td1 loss is zero when the net already reproduces its targets") {
    const ArchSpec a = ArchSpec::fully_connected({3, 2});
    const WeightBundle w = zero_weights(a);
    const Batch batch{Tensor({2, 3}), Mask({2, 3}, 1)};
    TrainConfig cfg = unroll_config(LossKind::SE, 4);
    CHECK(td1_loss(w, a, batch, cfg) == 0.0);
}

TEST_CASE("td1 with one sweep is the single-step loss") {
    Rng rng(7);
    const ArchSpec a = ArchSpec::fully_connected({4, 3});
    const WeightBundle w = random_weights(a, rng, 0.8);
    const Batch batch = random_batch(a, 1, rng);
    NetState s = initial_state(a, 1, EvidenceConstraint::clamp(batch.mask, batch.targets));
    s = update_layer(std::move(s), w, a, 1);
    const double expected = loss_se(unclamped_visible(s, w, a), batch.targets);
    CHECK(td1_loss(w, a, batch, unroll_config(LossKind::SE, 1)) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("td1 sums per-sweep losses and averages over items") {
    Rng rng(8);
    const ArchSpec a = ArchSpec::fully_connected({4, 3});
    const WeightBundle w = random_weights(a, rng, 0.8);
    const Batch batch = random_batch(a, 2, rng);
    double expected = 0.0;
    for (Index i = 0; i < 2; ++i) {
        NetState s = initial_state(a, 1, EvidenceConstraint::clamp(batch.mask.item(i).reshaped({1, 4}),
                                                                 batch.targets.item(i).reshaped({1, 4})));
        for (int t = 0; t < 3; ++t) {
            s = update_layer(std::move(s), w, a, 1);
            expected += loss_se(unclamped_visible(s, w, a).item(0), batch.targets.item(i)) / 2.0;
            s = update_layer(std::move(s), w, a, 0);
        }
    }
    CHECK(td1_loss(w, a, batch, unroll_config(LossKind::SE, 3)) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("td1 gradient matches finite differences") {
    Rng rng(11);
    for (auto loss : {LossKind::SE, LossKind::DeltaE, LossKind::DeltaEPlus}) {
        CAPTURE(static_cast<int>(loss));
        SUBCASE("fully connected, 4 units") {
            const ArchSpec a = ArchSpec::fully_connected({2, 2});
            const Batch batch = random_batch(a, 2, rng);
            CHECK(td1_gradient_error(random_weights(a, rng, 0.8), a, batch, unroll_config(loss, 3)) < 1e-4);
        }
        SUBCASE("three fc layers, leaky sigmoid") {
            const ArchSpec a = ArchSpec::fully_connected({3, 3, 2}, ActivationKind::leaky_sigmoid(0.3));
            const Batch batch = random_batch(a, 2, rng);
            CHECK(td1_gradient_error(random_weights(a, rng, 0.5), a, batch, unroll_config(loss, 5)) < 1e-4);
        }
        SUBCASE("pooled conv") {
            const ArchSpec a = small_conv_arch();
            const Batch batch = random_batch(a, 2, rng);
            CHECK(td1_gradient_error(random_weights(a, rng, 0.4), a, batch, unroll_config(loss, 3)) < 1e-4);
        }
        SUBCASE("asymmetric") {
            ArchSpec a = ArchSpec::fully_connected({3, 2});
            a.symmetric = false;
            const Batch batch = random_batch(a, 2, rng);
            CHECK(td1_gradient_error(random_weights(a, rng, 0.8), a, batch, unroll_config(loss, 4)) < 1e-4);
        }
    }
}

TEST_CASE("td1 gradient with convergence cut-offs matches finite differences") {
    // Items stop at different sweeps; the cut-off is locally constant, so
    // finite differences stay valid away from the threshold.
    Rng rng(12);
    const ArchSpec a = ArchSpec::fully_connected({4, 3});
    const Batch batch = random_batch(a, 3, rng);
    TrainConfig cfg;
    cfg.loss = LossKind::DeltaEPlus;
    cfg.theta = 0.01;
    const WeightBundle w = random_weights(a, rng, 0.4);
    std::vector<SettleReport> reports;
    td1_loss(w, a, batch, cfg, &reports);
    for (const auto& r : reports) CHECK(r.converged);
    CHECK(td1_gradient_error(w, a, batch, cfg) < 1e-4);
}

TEST_CASE("threaded gradients agree with a single tape") {
    Rng rng(13);
    const ArchSpec a = ArchSpec::fully_connected({5, 4, 3});
    const WeightBundle w = random_weights(a, rng, 0.6);
    const Batch batch = random_batch(a, 7, rng);
    TrainConfig cfg;
    const TD1Gradient one = td1_gradient(w, a, batch, cfg);
    cfg.threads = 3;
    const TD1Gradient many = td1_gradient(w, a, batch, cfg);
    CHECK(many.loss == doctest::Approx(one.loss).epsilon(1e-12));
    REQUIRE(many.reports.size() == 7);
    for (std::size_t k = 0; k < one.grads.size(); ++k) CHECK(max_abs_diff(one.grads[k], many.grads[k]) < 1e-12);
    for (std::size_t i = 0; i < 7; ++i) CHECK(one.reports[i].t_star == many.reports[i].t_star);
}

TEST_CASE("td1 settle reports agree with plain settling") {
    Rng rng(14);
    const ArchSpec a = ArchSpec::fully_connected({5, 4});
    const WeightBundle w = random_weights(a, rng, 0.6);
    const Batch batch = random_batch(a, 4, rng);
    TrainConfig cfg;
    std::vector<SettleReport> reports;
    td1_loss(w, a, batch, cfg, &reports);
    const SettleResult plain =
        settle(initial_state(a, 4, EvidenceConstraint::clamp(batch.mask, batch.targets)), w, a);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(reports[i].t_star == plain.reports[i].t_star);
        CHECK(reports[i].converged == plain.reports[i].converged);
    }
}

TEST_CASE("optimizer examples") {
    const ArchSpec a = ArchSpec::fully_connected({2, 1});
    OptimizerConfig sgd;
    sgd.lr = 0.01;
    WeightBundle w = zero_weights(a);
    w.forward[0] = Tensor({1, 2}, {1.0, 1.0});
    const WeightBundle before = w;

    SUBCASE("zero gradients leave weights unchanged") {
        for (auto kind : {OptimizerConfig::Kind::SgdL2, OptimizerConfig::Kind::SgdLinf,
                          OptimizerConfig::Kind::Adam}) {
            OptimizerConfig cfg = sgd;
            cfg.kind = kind;
            OptimizerState st = make_optimizer_state(cfg, w);
            std::vector<Tensor> zeros{Tensor({1, 2}), Tensor({2}), Tensor({1})};
            optimizer_step(st, w, zeros, cfg, cfg.lr);
            CHECK(w.forward[0] == before.forward[0]);
        }
    }
    SUBCASE("SGD-L2 takes a step of length lr along the gradient") {
        OptimizerState st = make_optimizer_state(sgd, w);
        optimizer_step(st, w, {Tensor({1, 2}, {3.0, 4.0}), Tensor({2}), Tensor({1})}, sgd, sgd.lr);
        CHECK(w.forward[0][0] == doctest::Approx(1.0 - 0.006));
        CHECK(w.forward[0][1] == doctest::Approx(1.0 - 0.008));
    }
    SUBCASE("SGD-Linf scales the largest component to lr") {
        OptimizerConfig cfg = sgd;
        cfg.kind = OptimizerConfig::Kind::SgdLinf;
        OptimizerState st = make_optimizer_state(cfg, w);
        optimizer_step(st, w, {Tensor({1, 2}, {3.0, -4.0}), Tensor({2}, {0.0, 1e-9}), Tensor({1})}, cfg, cfg.lr);
        CHECK(w.forward[0][0] == doctest::Approx(1.0 - 0.0075));
        CHECK(w.forward[0][1] == doctest::Approx(1.0 + 0.01));
        CHECK(w.bias[0][1] == doctest::Approx(-0.01));
    }
    SUBCASE("Adam first step has magnitude lr") {
        OptimizerConfig cfg = sgd;
        cfg.kind = OptimizerConfig::Kind::Adam;
        OptimizerState st = make_optimizer_state(cfg, w);
        optimizer_step(st, w, {Tensor({1, 2}, {0.5, -20.0}), Tensor({2}), Tensor({1})}, cfg, cfg.lr);
        CHECK(w.forward[0][0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
        CHECK(w.forward[0][1] == doctest::Approx(1.0 + 0.01).epsilon(1e-6));
        CHECK(st.step == 1);
    }
    SUBCASE("gradient count must match") {
        OptimizerState st = make_optimizer_state(sgd, w);
        CHECK_THROWS(optimizer_step(st, w, {Tensor({1, 2})}, sgd, sgd.lr));
    }
}

TEST_CASE("initialization") {
    CHECK(fc_init_std(25, 50) == doctest::Approx(0.016116459280507606).epsilon(1e-15));
    const ArchSpec a = ArchSpec::fully_connected({25, 50});
    const WeightBundle w1 = init_weights(a, 42), w2 = init_weights(a, 42), w3 = init_weights(a, 43);
    CHECK(w1.forward[0] == w2.forward[0]);
    CHECK_FALSE(w1.forward[0] == w3.forward[0]);
    for (const auto& b : w1.bias) CHECK(b == Tensor(b.shape()));
    const auto& f = w1.forward[0].vec();
    const double sd = std::sqrt(f.squaredNorm() / static_cast<double>(f.size()));
    CHECK(sd == doctest::Approx(fc_init_std(25, 50)).epsilon(0.05));

    ArchSpec c = small_conv_arch();
    c.conv_init_std = 0.001;
    const WeightBundle wc = init_weights(c, 1);
    CHECK(wc.forward[0].vec().cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("config validation and schedule") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.temperature = 2.0;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.optimizer.lr = 0.0;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.theta = -1.0;
    CHECK_THROWS(cfg.validate());
    cfg = {};
    cfg.lr_schedule = {{10, 0.1}, {20, 0.01}};
    CHECK(cfg.lr_at(0) == doctest::Approx(0.01));
    CHECK(cfg.lr_at(10) == doctest::Approx(0.001));
    CHECK(cfg.lr_at(25) == doctest::Approx(0.0001));
}

TEST_CASE("train: zero epochs, finiteness, determinism and symmetry") {
    ArchSpec a;
    a.layers = {LayerSpec::conv(1, 4, 4, false, LayerRole::Visible), LayerSpec::conv(2, 4, 4)};
    a.kernel_sizes = {3};
    Rng rng(15);
    Dataset data;
    for (int i = 0; i < 6; ++i) data.targets.push_back(uniform_tensor({1, 4, 4}, rng, -0.9, 0.9));
    data.make_mask = [](const Tensor& y, Rng& r) {
        Mask m(y.shape());
        std::bernoulli_distribution d(0.5);
        for (Index i = 0; i < m.size(); ++i) m[i] = d(r);
        return m;
    };
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.max_iters = 10;
    cfg.seed = 3;

    TrainState s0 = start_training(a, cfg);
    const WeightBundle init = s0.weights;
    CHECK(train(data, a, cfg, s0).epochs.empty());
    CHECK(s0.weights.forward[0] == init.forward[0]);

    cfg.epochs = 3;
    cfg.optimizer.kind = OptimizerConfig::Kind::Adam;
    TrainState s1 = start_training(a, cfg), s2 = start_training(a, cfg);
    const TrainLog log = train(data, a, cfg, s1);
    train(data, a, cfg, s2);
    REQUIRE(log.epochs.size() == 3);
    for (const auto& e : log.epochs) CHECK(std::isfinite(e.loss));
    CHECK(s1.weights.forward[0] == s2.weights.forward[0]);
    CHECK(s1.epoch == 3);

    const Tensor x = random_tensor({1, 4, 4}, rng), y = random_tensor({2, 4, 4}, rng);
    const Tensor& k = s1.weights.forward[0];
    CHECK(std::abs(inner(y, conv2d_half(x, k)) - inner(x, conv2d_half(y, reverse_kernel(k)))) < 1e-12);
}

}  // TEST_SUITE
