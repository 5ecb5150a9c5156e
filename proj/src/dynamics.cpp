#include "cban/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

namespace cban {

void ArchSpec::validate() const {
    if (layers.size() < 2) throw ArchError("architecture needs at least two layers");
    if (layers.front().role != LayerRole::Visible)
        throw ArchError("layer 0 must be visible");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const LayerSpec& s = layers[l];
        const std::string where = "layer " + std::to_string(l);
        if (s.is_conv()) {
            if (s.channels < 1 || s.height < 1 || s.width < 1)
                throw ArchError(where + ": conv extents must be positive");
        } else {
            if (s.units < 1) throw ArchError(where + ": unit count must be positive");
            if (s.pool_before) throw ArchError(where + ": pooling applies to conv layers only");
        }
        if (s.pool_before && l == 0) throw ArchError(where + ": first layer cannot be pooled");
        if (l == 0) continue;
        const LayerSpec& prev = layers[l - 1];
        if (is_conv_pair(l - 1)) {
            const Index k = kernel_size(l - 1);
            if (k < 1 || k % 2 == 0) throw ArchError(where + ": kernel size must be odd");
            if (s.pool_before) {
                if (prev.height % 2 || prev.width % 2)
                    throw ArchError(where + ": pooled layer needs even predecessor extents");
                if (s.height * 2 != prev.height || s.width * 2 != prev.width)
                    throw ArchError(where + ": pooled layer must halve spatial extents");
            } else if (s.height != prev.height || s.width != prev.width) {
                throw ArchError(where + ": unpooled conv layers must keep spatial extents");
            }
        } else if (s.pool_before) {
            throw ArchError(where + ": pooling needs a conv predecessor");
        }
    }
    if (activation.type == ActivationKind::Type::LeakySigmoid &&
        !(activation.alpha > 0.0 && activation.alpha < 1.0))
        throw ArchError("leaky sigmoid slope must lie in (0,1)");
}

ArchSpec ArchSpec::fully_connected(std::vector<Index> units, ActivationKind act) {
    ArchSpec arch;
    for (std::size_t i = 0; i < units.size(); ++i)
        arch.layers.push_back(LayerSpec::fc(units[i], i == 0 ? LayerRole::Visible : LayerRole::Hidden));
    arch.kernel_sizes.assign(arch.num_pairs(), 0);
    arch.activation = act;
    return arch;
}

std::vector<Tensor*> parameters(WeightBundle& w) {
    std::vector<Tensor*> out;
    for (auto& t : w.forward) out.push_back(&t);
    for (auto& t : w.bias) out.push_back(&t);
    for (auto& t : w.reverse) out.push_back(&t);
    return out;
}

std::vector<const Tensor*> parameters(const WeightBundle& w) {
    std::vector<const Tensor*> out;
    for (const auto& t : w.forward) out.push_back(&t);
    for (const auto& t : w.bias) out.push_back(&t);
    for (const auto& t : w.reverse) out.push_back(&t);
    return out;
}

WeightBundle zero_weights(const ArchSpec& arch) {
    arch.validate();
    WeightBundle w;
    for (std::size_t p = 0; p < arch.num_pairs(); ++p) {
        const LayerSpec& lo = arch.layers[p];
        const LayerSpec& hi = arch.layers[p + 1];
        if (arch.is_conv_pair(p)) {
            const Index k = arch.kernel_size(p);
            w.forward.emplace_back(Shape{hi.channels, lo.channels, k, k});
            if (!arch.symmetric) w.reverse.emplace_back(Shape{lo.channels, hi.channels, k, k});
        } else {
            w.forward.emplace_back(Shape{hi.size(), lo.size()});
            if (!arch.symmetric) w.reverse.emplace_back(Shape{lo.size(), hi.size()});
        }
    }
    for (const LayerSpec& s : arch.layers) w.bias.emplace_back(Shape{s.bias_size()});
    return w;
}

void validate_evidence(const ArchSpec& arch, std::size_t layer, const EvidenceConstraint& ev,
                       Index batch) {
    if (layer >= arch.num_layers()) throw ArchError("evidence on a missing layer");
    if (arch.layers[layer].role != LayerRole::Visible)
        throw ArchError("evidence attached to hidden layer " + std::to_string(layer));
    const Shape shape = arch.layers[layer].batched_shape(batch);
    require_same_shape(ev.mask.shape(), shape, "evidence mask");
    require_same_shape(ev.values.shape(), shape, "evidence values");
    if (arch.activation.is_tanh())
        for (Index i = 0; i < ev.values.size(); ++i)
            if (ev.mask[i] && !(std::abs(ev.values[i]) < 1.0))
                throw DomainError("evidence value outside the tanh range at index " +
                                  std::to_string(i));
    if (ev.mode == EvidenceConstraint::Mode::ConvexMix && !(ev.strength >= 0.0 && ev.strength <= 1.0))
        throw std::invalid_argument("convex-mix weight must lie in [0,1]");
}

NetState initial_state(const ArchSpec& arch, Index n, std::optional<EvidenceConstraint> visible_evidence) {
    arch.validate();
    NetState state;
    for (const LayerSpec& s : arch.layers) state.activations.emplace_back(s.batched_shape(n));
    state.evidence.resize(arch.num_layers());
    if (visible_evidence) {
        validate_evidence(arch, 0, *visible_evidence, n);
        Tensor& v = state.activations[0];
        for (Index i = 0; i < v.size(); ++i)
            if (visible_evidence->mask[i]) v[i] = visible_evidence->values[i];
        state.evidence[0] = std::move(visible_evidence);
    }
    return state;
}

Tensor layer_preactivation(const NetState& state, const WeightBundle& w, const ArchSpec& arch,
                           std::size_t l) {
    if (l >= arch.num_layers()) throw std::out_of_range("layer index out of range");
    detail::Maps<Tensor> maps(arch, w);
    Tensor pre = maps.net_input(l, state.activations);
    if (const auto* ev = detail::evidence_at(state.evidence, l);
        ev && ev->mode == EvidenceConstraint::Mode::ExternalBias)
        for (Index i = 0; i < pre.size(); ++i)
            if (ev->mask[i]) pre[i] += ev->strength * ev->values[i];
    return pre;
}

NetState update_layer(NetState state, const WeightBundle& w, const ArchSpec& arch, std::size_t l) {
    if (l >= arch.num_layers()) throw std::out_of_range("layer index out of range");
    detail::Maps<Tensor> maps(arch, w);
    state.activations[l] = maps.update(l, state.activations, detail::evidence_at(state.evidence, l));
    return state;
}

NetState sweep(NetState state, const WeightBundle& w, const ArchSpec& arch) {
    detail::Maps<Tensor> maps(arch, w);
    detail::sweep_layers(maps, state.activations, state.evidence, [](const auto&) {});
    return state;
}

namespace {

Eigen::VectorXd rowwise_inner(const Tensor& a, const Tensor& b) {
    const Index n = a.dim(0);
    return a.matrix(n).cwiseProduct(b.matrix(n)).rowwise().sum();
}

}  // namespace

Eigen::VectorXd energy_per_item(const NetState& state, const WeightBundle& w, const ArchSpec& arch) {
    detail::Maps<Tensor> maps(arch, w);
    const Index n = state.batch();
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    const auto& x = state.activations;
    for (std::size_t p = 0; p < arch.num_pairs(); ++p) e -= rowwise_inner(x[p + 1], maps.up(p, x[p]));
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
        const Tensor rho = barrier(arch.activation, x[l]);
        const Tensor biased = add_bias(Tensor(x[l].shape()), w.bias[l]);
        e += rho.matrix(n).rowwise().sum() - rowwise_inner(biased, x[l]);
    }
    return e;
}

double energy(const NetState& state, const WeightBundle& w, const ArchSpec& arch) {
    return energy_per_item(state, w, arch).sum();
}

int detect_cycle(std::span<const Tensor> states, double tol) {
    const std::size_t n = states.size();
    for (std::size_t p = 1; 2 * p <= n; ++p) {
        bool ok = true;
        for (std::size_t t = p; t < n && ok; ++t) ok = max_abs_diff(states[t], states[t - p]) < tol;
        if (ok) return static_cast<int>(p);
    }
    return 0;
}

SettleResult settle(NetState state, const WeightBundle& w, const ArchSpec& arch,
                    const SettleOptions& opt) {
    if (!(opt.theta > 0.0)) throw std::invalid_argument("settle: theta must be positive");
    if (opt.max_iters < 1) throw std::invalid_argument("settle: max_iters must be >= 1");
    arch.validate();

    const Index n = state.batch();
    const std::size_t layers = arch.num_layers();
    detail::Maps<Tensor> maps(arch, w);
    std::vector<SettleReport> reports(static_cast<std::size_t>(n));
    std::vector<bool> done(static_cast<std::size_t>(n), false);
    std::deque<std::vector<Tensor>> trail;  // trailing full states, for cycle detection
    Index remaining = n;

    for (int t = 1; t <= opt.max_iters && remaining > 0; ++t) {
        const std::vector<Tensor> prev = state.activations;
        try {
            detail::sweep_layers(maps, state.activations, state.evidence, [](const auto&) {});
        } catch (const NumericError& e) {
            throw NumericError("settle: non-finite state at iteration " + std::to_string(t) + ": " +
                               e.what());
        }
        Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);
        for (std::size_t l = 0; l < layers; ++l)
            delta = delta.cwiseMax(
                (state.activations[l].matrix(n) - prev[l].matrix(n)).cwiseAbs().rowwise().maxCoeff());
        Eigen::VectorXd e;
        if (opt.record_energy) e = energy_per_item(state, w, arch);

        for (Index i = 0; i < n; ++i) {
            auto& r = reports[static_cast<std::size_t>(i)];
            if (done[static_cast<std::size_t>(i)]) {
                for (std::size_t l = 0; l < layers; ++l) state.activations[l].set_item(i, prev[l].item(i));
                continue;
            }
            r.t_star = t;
            r.max_delta_trace.push_back(delta(i));
            if (opt.record_energy) r.energy_trace.push_back(e(i));
            if (delta(i) < opt.theta) {
                r.converged = true;
                done[static_cast<std::size_t>(i)] = true;
                --remaining;
            }
        }
        if (opt.cycle_window > 0) {
            trail.push_back(state.activations);
            if (trail.size() > opt.cycle_window) trail.pop_front();
        }
    }

    for (Index i = 0; i < n; ++i) {
        auto& r = reports[static_cast<std::size_t>(i)];
        if (r.converged || trail.size() < 2) continue;
        std::vector<Tensor> item_states;
        for (const auto& s : trail) {
            std::vector<double> buf;
            for (const Tensor& layer : s) {
                const Tensor it = layer.item(i);
                buf.insert(buf.end(), it.data(), it.data() + it.size());
            }
            item_states.emplace_back(Shape{static_cast<Index>(buf.size())},
                                     Eigen::Map<Eigen::VectorXd>(buf.data(), static_cast<Index>(buf.size())));
        }
        r.cycle_length = detect_cycle(item_states, opt.theta);
    }
    return {std::move(state), std::move(reports)};
}

std::vector<Eigen::VectorXd> incoming_l1(const WeightBundle& w, const ArchSpec& arch) {
    std::vector<Eigen::VectorXd> in;
    for (const LayerSpec& s : arch.layers) in.push_back(Eigen::VectorXd::Zero(s.size()));

    auto broadcast_channels = [](const Eigen::VectorXd& per_channel, const LayerSpec& s) {
        Eigen::VectorXd out(s.size());
        const Index plane = s.height * s.width;
        for (Index c = 0; c < s.channels; ++c) out.segment(c * plane, plane).setConstant(per_channel(c));
        return out;
    };

    for (std::size_t p = 0; p < arch.num_pairs(); ++p) {
        const LayerSpec& lo = arch.layers[p];
        const LayerSpec& hi = arch.layers[p + 1];
        const Tensor& f = w.forward[p];
        if (arch.is_conv_pair(p)) {
            const Index q = f.dim(0), r = f.dim(1);
            const Eigen::MatrixXd absf = f.matrix(q).cwiseAbs();  // (q, r*a*b)
            Eigen::VectorXd to_hi = absf.rowwise().sum();
            Eigen::VectorXd to_lo = Eigen::VectorXd::Zero(r);
            if (arch.symmetric) {
                const Index ab = f.size() / (q * r);
                for (Index ir = 0; ir < r; ++ir) to_lo(ir) = absf.middleCols(ir * ab, ab).sum();
            } else {
                const Tensor& rv = w.reverse[p];
                to_lo = rv.matrix(rv.dim(0)).cwiseAbs().rowwise().sum();
            }
            in[p + 1] += broadcast_channels(to_hi, hi);
            in[p] += broadcast_channels(to_lo, lo);
        } else {
            const auto m = f.matrix(f.dim(0)).cwiseAbs();
            in[p + 1] += m.rowwise().sum();
            if (arch.symmetric)
                in[p] += m.colwise().sum().transpose();
            else
                in[p] += w.reverse[p].matrix(w.reverse[p].dim(0)).cwiseAbs().rowwise().sum();
        }
    }
    return in;
}

double norm_1inf(const WeightBundle& w, const ArchSpec& arch) {
    double best = 0.0;
    for (const auto& v : incoming_l1(w, arch))
        if (v.size()) best = std::max(best, v.maxCoeff());
    return best;
}

double fixed_point_residual(const NetState& state, const WeightBundle& w, const ArchSpec& arch) {
    detail::Maps<Tensor> maps(arch, w);
    double worst = 0.0;
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
        const Tensor next = maps.update(l, state.activations, detail::evidence_at(state.evidence, l));
        worst = std::max(worst, max_abs_diff(next, state.activations[l]));
    }
    return worst;
}

SyncReport iterate_synchronous(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, Eigen::VectorXd x,
                               const ActivationKind& act, const SyncOptions& opt) {
    std::deque<Tensor> trail;
    SyncReport report;
    const Index n = x.size();
    for (int t = 1; t <= opt.max_iters; ++t) {
        Eigen::VectorXd z = w * x + b;
        for (Index i = 0; i < n; ++i) x(i) = act::f(act, z(i));
        trail.emplace_back(Shape{n}, x);
        if (trail.size() > opt.window) trail.pop_front();
        report.iterations = t;
        if (trail.size() == opt.window && t % static_cast<int>(opt.window) == 0) {
            std::vector<Tensor> states(trail.begin(), trail.end());
            if (const int p = detect_cycle(states, opt.tol); p > 0) {
                report.period = p;
                return report;
            }
        }
    }
    std::vector<Tensor> states(trail.begin(), trail.end());
    report.period = detect_cycle(states, opt.tol);
    return report;
}

}  // namespace cban
