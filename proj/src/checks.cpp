#include "cban/checks.hpp"

#include "cban/dynamics.hpp"
#include "cban/random.hpp"
#include "cban/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>

namespace cban {

namespace {

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(3);
    s << v;
    return s.str();
}

Tensor gaussian(const Shape& shape, Rng& rng, double std) {
    Tensor t(shape);
    std::normal_distribution<double> d(0.0, std);
    for (Index i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

Tensor uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    Tensor t(shape);
    std::uniform_real_distribution<double> d(lo, hi);
    for (Index i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

Index pick(Rng& rng, Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); }

double pick(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

/// 2 or 3 fc layers with at most `max_units` units in total.
std::vector<Index> random_sizes(Rng& rng, Index max_units) {
    const Index layers = pick(rng, Index{2}, Index{3});
    std::vector<Index> sizes;
    Index left = max_units;
    for (Index l = 0; l < layers; ++l) {
        const Index room = left - 2 * (layers - l - 1);
        sizes.push_back(pick(rng, Index{2}, std::min<Index>(room, 32)));
        left -= sizes.back();
    }
    return sizes;
}

WeightBundle random_weights(const ArchSpec& arch, Rng& rng, double gain, double bias_std) {
    WeightBundle w = zero_weights(arch);
    for (std::size_t p = 0; p < arch.num_pairs(); ++p) {
        const double fan = static_cast<double>(w.forward[p].size()) / static_cast<double>(w.forward[p].dim(0));
        w.forward[p] = gaussian(w.forward[p].shape(), rng, gain / std::sqrt(fan));
        if (!arch.symmetric) w.reverse[p] = gaussian(w.reverse[p].shape(), rng, gain / std::sqrt(fan));
    }
    for (auto& b : w.bias) b = gaussian(b.shape(), rng, bias_std);
    return w;
}

NetState random_state(const ArchSpec& arch, Rng& rng, Index n, double range) {
    NetState s = initial_state(arch, n);
    for (auto& a : s.activations) a = uniform(a.shape(), rng, -range, range);
    return s;
}

std::vector<std::size_t> sweep_order(std::size_t layers) {
    std::vector<std::size_t> order;
    for (std::size_t l = 1; l < layers; ++l) order.push_back(l);
    for (std::size_t l = layers - 1; l-- > 0;) order.push_back(l);
    return order;
}

}  // namespace

std::vector<CheckRow> check_energy(const CheckOptions& opt) {
    Rng rng(opt.seed);
    int violations = 0, unsettled = 0, updates = 0, max_t = 0;
    double worst_rise = 0.0;
    for (int trial = 0; trial < opt.trials; ++trial) {
        const ArchSpec arch = ArchSpec::fully_connected(random_sizes(rng, 64));
        const WeightBundle w = random_weights(arch, rng, pick(rng, 0.3, 3.0), 0.3);
        NetState s = random_state(arch, rng, 1, 0.99);
        const auto order = sweep_order(arch.num_layers());
        for (int t = 0; t < 5; ++t)
            for (std::size_t l : order) {
                const double before = energy(s, w, arch);
                s = update_layer(std::move(s), w, arch, l);
                const double rise = energy(s, w, arch) - before;
                worst_rise = std::max(worst_rise, rise);
                violations += rise > 1e-9;
                ++updates;
            }
        SettleOptions so;
        so.theta = 1e-3;
        so.max_iters = 500;
        so.record_energy = false;
        const SettleReport r = settle(random_state(arch, rng, 1, 0.99), w, arch, so).reports[0];
        unsettled += !(r.converged && r.cycle_length == 0);
        max_t = std::max(max_t, r.t_star);
    }
    return {{"layerwise energy descent", violations == 0,
             std::to_string(updates) + " updates, " + std::to_string(violations) +
                 " rises > 1e-9, largest change " + fmt(worst_rise)},
            {"settles to a fixed point", unsettled == 0,
             std::to_string(opt.trials - unsettled) + "/" + std::to_string(opt.trials) +
                 " converged (theta 1e-3, <= 500 sweeps), slowest t* " + std::to_string(max_t)}};
}

std::vector<CheckRow> check_energy_difference(const CheckOptions& opt) {
    Rng rng(opt.seed + 1);
    double worst = 0.0;
    for (int trial = 0; trial < opt.trials; ++trial) {
        const ActivationKind kind =
            trial % 2 ? ActivationKind::tanh() : ActivationKind::leaky_sigmoid(pick(rng, 0.1, 0.9));
        const ArchSpec arch = ArchSpec::fully_connected(random_sizes(rng, 40), kind);
        const WeightBundle w = random_weights(arch, rng, pick(rng, 0.3, 1.5), 0.3);
        NetState clamped = random_state(arch, rng, 1, 0.95);
        NetState free = clamped;
        free.activations[0] = unclamped_visible(clamped, w, arch);
        if (kind.is_tanh())
            for (Index i = 0; i < free.activations[0].size(); ++i)
                free.activations[0][i] = std::clamp(free.activations[0][i], -kInverseClip, kInverseClip);
        const ContrastivePair pair{clamped.activations[0], free.activations[0], {}};
        const double diff = energy(clamped, w, arch) - energy(free, w, arch);
        worst = std::max(worst, std::abs(loss_delta_e(pair, kind) - diff));
    }
    return {{"dE closed form equals energy difference", worst <= 1e-10,
             std::to_string(opt.trials) + " nets, largest gap " + fmt(worst)}};
}

std::vector<CheckRow> check_synchronous(const CheckOptions& opt) {
    Rng rng(opt.seed + 2);
    int period1 = 0, period2 = 0, other = 0;
    std::normal_distribution<double> d(0.0, 1.0);
    for (int trial = 0; trial < opt.trials; ++trial) {
        const auto n = static_cast<int>(pick(rng, Index{2}, Index{16}));
        const double gain = pick(rng, 0.5, 4.0) / std::sqrt(static_cast<double>(n));
        Eigen::MatrixXd w(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j) w(i, j) = w(j, i) = gain * d(rng);
        w.diagonal() = w.diagonal().cwiseAbs();
        Eigen::VectorXd b(n), x(n);
        for (int i = 0; i < n; ++i) {
            b(i) = 0.2 * d(rng);
            x(i) = pick(rng, -1.0, 1.0);
        }
        const SyncReport r = iterate_synchronous(w, b, x, ActivationKind::tanh());
        period1 += r.period == 1;
        period2 += r.period == 2;
        other += r.period != 1 && r.period != 2;
    }
    return {{"synchronous period is 1 or 2", other == 0,
             std::to_string(period1) + " fixed points, " + std::to_string(period2) + " two-cycles, " +
                 std::to_string(other) + " other"}};
}

std::vector<CheckRow> check_leaky_bound(const CheckOptions& opt) {
    Rng rng(opt.seed + 3);
    auto run = [&](double target, const SettleOptions& so, int& failures) {
        for (int trial = 0; trial < opt.trials; ++trial) {
            const auto kind = ActivationKind::leaky_sigmoid(pick(rng, 0.1, 0.9));
            const ArchSpec arch = ArchSpec::fully_connected(random_sizes(rng, 64), kind);
            WeightBundle w = random_weights(arch, rng, 1.0, 0.3);
            const double scale = target / (kind.alpha * norm_1inf(w, arch));
            for (auto& f : w.forward) f = scale * f;
            try {
                const SettleReport r = settle(random_state(arch, rng, 1, 1.0), w, arch, so).reports[0];
                failures += !(r.converged && r.cycle_length == 0);
            } catch (const NumericError&) {
                ++failures;  // diverged to non-finite values
            }
        }
    };
    SettleOptions tight;
    tight.theta = 1e-6;
    tight.max_iters = 5000;
    tight.record_energy = false;
    int bounded_failures = 0;
    run(0.9, tight, bounded_failures);

    SettleOptions loose;
    loose.max_iters = 100;
    loose.record_energy = false;
    int unbounded_failures = 0;
    run(5.0, loose, unbounded_failures);
    return {{"alpha*norm = 0.9 always settles", bounded_failures == 0,
             std::to_string(opt.trials - bounded_failures) + "/" + std::to_string(opt.trials) + " fixed points"},
            {"alpha*norm = 5 can fail to settle", unbounded_failures > 0,
             std::to_string(unbounded_failures) + "/" + std::to_string(opt.trials) + " non-convergent or cyclic"}};
}

std::vector<CheckRow> check_gradients(const CheckOptions& opt) {
    Rng rng(opt.seed + 4);
    std::vector<CheckRow> rows;
    const std::pair<LossKind, const char*> losses[] = {
        {LossKind::SE, "SE"}, {LossKind::DeltaE, "dE"}, {LossKind::DeltaEPlus, "dE+"}};
    for (const auto& [loss, name] : losses) {
        double worst = 0.0;
        int params_checked = 0;
        for (int trial = 0; trial < opt.trials; ++trial) {
            ArchSpec arch;
            switch (trial % 4) {
                case 0:
                    arch = ArchSpec::fully_connected({pick(rng, Index{2}, Index{5}), pick(rng, Index{2}, Index{5})});
                    break;
                case 1:
                    arch = ArchSpec::fully_connected({3, pick(rng, Index{2}, Index{3}), 2},
                                                     trial % 8 == 1 ? ActivationKind::leaky_sigmoid(0.3)
                                                                    : ActivationKind::tanh());
                    break;
                case 2:
                    arch.layers = {LayerSpec::conv(1, 4, 4, false, LayerRole::Visible), LayerSpec::conv(2, 4, 4),
                                   LayerSpec::conv(1, 2, 2, true)};
                    arch.kernel_sizes = {3, 3};
                    break;
                default:
                    arch = ArchSpec::fully_connected({3, 2});
                    arch.symmetric = false;
                    break;
            }
            WeightBundle w = random_weights(arch, rng, pick(rng, 0.5, 1.5), 0.3);
            const Index n = pick(rng, Index{1}, Index{2});
            const Shape vis = arch.layers[0].batched_shape(n);
            Batch batch{uniform(vis, rng, -0.95, 0.95), Mask(vis)};
            std::bernoulli_distribution observed(0.5);
            for (Index i = 0; i < batch.mask.size(); ++i) batch.mask[i] = observed(rng);

            TrainConfig cfg;
            cfg.loss = loss;
            cfg.theta = 1e-14;
            cfg.max_iters = static_cast<int>(pick(rng, Index{1}, Index{5}));
            const TD1Gradient g = td1_gradient(w, arch, batch, cfg);
            auto params = parameters(w);
            for (std::size_t k = 0; k < params.size(); ++k) {
                Tensor& p = *params[k];
                for (Index i = 0; i < p.size(); ++i) {
                    const double keep = p[i], h = 1e-5;
                    p[i] = keep + h;
                    const double up = td1_loss(w, arch, batch, cfg);
                    p[i] = keep - h;
                    const double down = td1_loss(w, arch, batch, cfg);
                    p[i] = keep;
                    const double numeric = (up - down) / (2 * h), analytic = g.grads[k][i];
                    const double rel = std::abs(numeric - analytic) /
                                       std::max({std::abs(numeric), std::abs(analytic), 1e-7});
                    worst = std::max(worst, rel);
                    ++params_checked;
                }
            }
        }
        rows.push_back({std::string("gradient ") + name + " vs finite differences", worst < 1e-4,
                        std::to_string(opt.trials) + " configs, " + std::to_string(params_checked) +
                            " parameters, worst relative error " + fmt(worst)});
    }
    return rows;
}

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names = {"gradients", "energy", "convergence", "bound"};
    return names;
}

std::vector<CheckRow> run_suite(const std::string& name, const CheckOptions& opt) {
    if (name == "gradients") return check_gradients(opt);
    if (name == "energy") {
        auto rows = check_energy(opt);
        auto more = check_energy_difference(opt);
        rows.insert(rows.end(), more.begin(), more.end());
        return rows;
    }
    if (name == "convergence") return check_synchronous(opt);
    if (name == "bound") return check_leaky_bound(opt);
    throw std::invalid_argument("unknown suite '" + name + "'");
}

}  // namespace cban
