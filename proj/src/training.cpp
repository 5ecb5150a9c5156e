#include "cban/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

namespace cban {

void TrainConfig::validate() const {
    if (!(optimizer.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(theta > 0.0)) throw std::invalid_argument("theta must be positive");
    if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (temperature != 1.0) throw std::invalid_argument("temperature is fixed at 1");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

double TrainConfig::lr_at(int epoch) const {
    double mult = 1.0;
    for (const auto& [from, m] : lr_schedule)
        if (epoch >= from) mult = m;
    return optimizer.lr * mult;
}

Tensor unclamped_visible(const NetState& state, const WeightBundle& w, const ArchSpec& arch) {
    detail::Maps<Tensor> maps(arch, w);
    return activation(arch.activation, maps.net_input(0, state.activations));
}

double loss_se(const Tensor& v_tilde, const Tensor& y) {
    require_same_shape(v_tilde.shape(), y.shape(), "loss_se");
    return (v_tilde.vec() - y.vec()).squaredNorm();
}

namespace {

/// Per-item loss of the visible read-out against the targets.
template <class V>
V item_losses(LossKind loss, const ActivationKind& kind, const V& v_tilde, const Tensor& y) {
    if (loss == LossKind::SE) {
        V d = v_tilde - y;
        return sum_items(d * d);
    }
    V v = kind.is_tanh() ? clip(v_tilde, -kInverseClip, kInverseClip) : v_tilde;
    V delta = sum_items(inverse_activation(kind, v) * (v - y) + barrier(kind, y) - barrier(kind, v));
    return loss == LossKind::DeltaEPlus ? softplus(delta) : delta;
}

template <class V>
V make_constant(Tape* tape, Tensor t) {
    if constexpr (std::is_same_v<V, Var>)
        return tape->constant(std::move(t));
    else
        return t;
}

/// Shared TD(1) unroll. Returns the mean over items of the per-sweep losses summed to t*.
template <class V>
V td1_unroll(Tape* tape, const BasicWeights<V>& w, const ArchSpec& arch, const Batch& batch,
             const TrainConfig& cfg, std::vector<SettleReport>& reports) {
    arch.validate();
    cfg.validate();
    const Index n = batch.size();
    NetState init = initial_state(arch, n, batch_evidence(batch, cfg));
    detail::Maps<V> maps(arch, w);

    std::vector<V> acts;
    for (auto& t : init.activations) acts.push_back(make_constant<V>(tape, std::move(t)));

    reports.assign(static_cast<std::size_t>(n), SettleReport{});
    Tensor active({n}, 1.0);
    std::optional<V> total;
    Index remaining = n;

    for (int t = 1; t <= cfg.max_iters && remaining > 0; ++t) {
        std::vector<Tensor> prev;
        for (const V& a : acts) prev.push_back(value_of(a));

        detail::sweep_layers(maps, acts, init.evidence, [&](const std::vector<V>& now) {
            V v_tilde = activation(arch.activation, maps.net_input(0, now));
            V step = sum(item_losses(cfg.loss, arch.activation, v_tilde, batch.targets) * active);
            total = total ? *total + step : step;
        });

        Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);
        for (std::size_t l = 0; l < acts.size(); ++l)
            delta = delta.cwiseMax((value_of(acts[l]).matrix(n) - prev[l].matrix(n))
                                       .cwiseAbs()
                                       .rowwise()
                                       .maxCoeff());
        for (Index i = 0; i < n; ++i) {
            if (active[i] == 0.0) continue;
            auto& r = reports[static_cast<std::size_t>(i)];
            r.t_star = t;
            r.max_delta_trace.push_back(delta(i));
            if (delta(i) < cfg.theta) {
                r.converged = true;
                active[i] = 0.0;
                --remaining;
            }
        }
    }
    return (1.0 / static_cast<double>(n)) * *total;
}

}  // namespace

EvidenceConstraint batch_evidence(const Batch& batch, const TrainConfig& cfg) {
    require_same_shape(batch.targets.shape(), batch.mask.shape(), "batch mask");
    EvidenceConstraint ev;
    ev.mode = cfg.evidence_mode;
    ev.strength = cfg.evidence_strength;
    ev.mask = batch.mask;
    ev.values = batch.targets;
    return ev;
}

double loss_delta_e(const ContrastivePair& pair, const ActivationKind& kind) {
    const Tensor& y = pair.clamped_visible;
    const Tensor& v = pair.unclamped_visible;
    require_same_shape(v.shape(), y.shape(), "loss_delta_e");
    const Tensor finv = inverse_activation(kind, v);
    const Tensor rho_y = barrier(kind, y);
    const Tensor rho_v = barrier(kind, v);
    return (finv.vec().cwiseProduct(v.vec() - y.vec()) + rho_y.vec() - rho_v.vec()).sum();
}

double loss_delta_e_plus(const ContrastivePair& pair, const ActivationKind& kind) {
    return softplus(loss_delta_e(pair, kind));
}

TD1Output td1_forward(Tape& tape, const BasicWeights<Var>& w, const ArchSpec& arch,
                      const Batch& batch, const TrainConfig& cfg) {
    TD1Output out;
    out.total_loss = td1_unroll<Var>(&tape, w, arch, batch, cfg, out.reports);
    return out;
}

double td1_loss(const WeightBundle& w, const ArchSpec& arch, const Batch& batch,
                const TrainConfig& cfg, std::vector<SettleReport>* reports) {
    std::vector<SettleReport> local;
    const Tensor loss = td1_unroll<Tensor>(nullptr, w, arch, batch, cfg, reports ? *reports : local);
    return loss[0];
}

namespace {

Batch slice(const Batch& b, Index from, Index count) {
    Shape shape = b.targets.shape();
    shape[0] = count;
    const Index item = b.targets.size() / b.size();
    Batch out{Tensor(shape), Mask(shape)};
    out.targets.vec() = b.targets.vec().segment(from * item, count * item);
    out.mask.vec() = b.mask.vec().segment(from * item, count * item);
    return out;
}

TD1Gradient chunk_gradient(const WeightBundle& w, const ArchSpec& arch, const Batch& batch,
                           const TrainConfig& cfg) {
    Tape tape;
    BasicWeights<Var> tw;
    std::vector<Var> inputs;
    for (const Tensor& t : w.forward) inputs.push_back(tw.forward.emplace_back(tape.input(t)));
    for (const Tensor& t : w.bias) inputs.push_back(tw.bias.emplace_back(tape.input(t)));
    for (const Tensor& t : w.reverse) inputs.push_back(tw.reverse.emplace_back(tape.input(t)));
    TD1Output fwd = td1_forward(tape, tw, arch, batch, cfg);
    TD1Gradient g;
    g.loss = fwd.total_loss.value()[0];
    g.grads = grad(tape, fwd.total_loss, inputs);
    g.reports = std::move(fwd.reports);
    return g;
}

}  // namespace

TD1Gradient td1_gradient(const WeightBundle& w, const ArchSpec& arch, const Batch& batch,
                         const TrainConfig& cfg) {
    const Index n = batch.size();
    const Index chunks = std::min<Index>(cfg.threads, n);
    if (chunks <= 1) return chunk_gradient(w, arch, batch, cfg);

    std::vector<TD1Gradient> parts(static_cast<std::size_t>(chunks));
    std::vector<Index> sizes(static_cast<std::size_t>(chunks));
    {
        std::vector<std::jthread> workers;
        Index from = 0;
        for (Index c = 0; c < chunks; ++c) {
            const Index count = n / chunks + (c < n % chunks ? 1 : 0);
            sizes[static_cast<std::size_t>(c)] = count;
            workers.emplace_back([&, c, from, count] {
                parts[static_cast<std::size_t>(c)] = chunk_gradient(w, arch, slice(batch, from, count), cfg);
            });
            from += count;
        }
    }
    TD1Gradient total;
    total.grads.reserve(parts[0].grads.size());
    for (const Tensor& t : parts[0].grads) total.grads.emplace_back(t.shape());
    for (std::size_t c = 0; c < parts.size(); ++c) {
        const double share = static_cast<double>(sizes[c]) / static_cast<double>(n);
        total.loss += share * parts[c].loss;
        for (std::size_t k = 0; k < total.grads.size(); ++k) total.grads[k].vec() += share * parts[c].grads[k].vec();
        total.reports.insert(total.reports.end(), parts[c].reports.begin(), parts[c].reports.end());
    }
    return total;
}

OptimizerState make_optimizer_state(const OptimizerConfig& cfg, const WeightBundle& w) {
    OptimizerState s;
    s.kind = cfg.kind;
    if (cfg.kind == OptimizerConfig::Kind::Adam)
        for (const Tensor* p : parameters(w)) {
            s.m.emplace_back(p->shape());
            s.v.emplace_back(p->shape());
        }
    return s;
}

void optimizer_step(OptimizerState& state, WeightBundle& w, const std::vector<Tensor>& grads,
                    const OptimizerConfig& cfg, double lr) {
    auto params = parameters(w);
    if (grads.size() != params.size()) throw std::invalid_argument("optimizer_step: gradient count mismatch");
    ++state.step;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = grads[k];
        require_same_shape(p.shape(), g.shape(), "optimizer_step");
        switch (cfg.kind) {
            case OptimizerConfig::Kind::SgdL2:
            case OptimizerConfig::Kind::SgdLinf: {
                const double norm = cfg.kind == OptimizerConfig::Kind::SgdL2 ? g.vec().norm()
                                                                            : g.vec().lpNorm<Eigen::Infinity>();
                if (norm > 0.0)
                    p.vec() -= (lr / norm) * g.vec();
                break;
            }
            case OptimizerConfig::Kind::Adam: {
                if (state.m.size() != params.size()) {
                    state.m.clear();
                    state.v.clear();
                    for (const Tensor* q : params) {
                        state.m.emplace_back(q->shape());
                        state.v.emplace_back(q->shape());
                    }
                }
                auto& m = state.m[k].vec();
                auto& v = state.v[k].vec();
                m = cfg.beta1 * m + (1.0 - cfg.beta1) * g.vec();
                v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.vec().cwiseAbs2();
                const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
                const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
                p.vec().array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
                break;
            }
        }
        require_finite(p, "optimizer_step");
    }
}

double fc_init_std(Index n_lo, Index n_hi) {
    return 0.1 / std::sqrt(0.5 * static_cast<double>(n_lo) + 0.5 * static_cast<double>(n_hi) + 1.0);
}

WeightBundle init_weights(const ArchSpec& arch, std::uint64_t seed) {
    WeightBundle w = zero_weights(arch);
    Rng rng(seed);
    auto fill = [&rng](Tensor& t, double std) {
        std::normal_distribution<double> dist(0.0, std);
        for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
    };
    for (std::size_t p = 0; p < arch.num_pairs(); ++p) {
        const double std = arch.is_conv_pair(p)
                               ? arch.conv_init_std
                               : fc_init_std(arch.layers[p].size(), arch.layers[p + 1].size());
        fill(w.forward[p], std);
        if (!arch.symmetric) fill(w.reverse[p], std);
    }
    return w;
}

Tensor stack(const std::vector<const Tensor*>& items) {
    Shape shape = items.front()->shape();
    shape.insert(shape.begin(), static_cast<Index>(items.size()));
    Tensor out(shape);
    for (std::size_t i = 0; i < items.size(); ++i) out.set_item(static_cast<Index>(i), *items[i]);
    return out;
}

Mask stack(const std::vector<const Mask*>& items) {
    Shape shape = items.front()->shape();
    shape.insert(shape.begin(), static_cast<Index>(items.size()));
    Mask out(shape);
    for (std::size_t i = 0; i < items.size(); ++i) out.set_item(static_cast<Index>(i), *items[i]);
    return out;
}

TrainState start_training(const ArchSpec& arch, const TrainConfig& cfg) {
    TrainState s;
    s.weights = init_weights(arch, cfg.seed);
    s.optimizer = make_optimizer_state(cfg.optimizer, s.weights);
    s.rng.seed(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    return s;
}

TrainLog train(const Dataset& data, const ArchSpec& arch, const TrainConfig& cfg, TrainState& state,
               const TrainHooks& hooks) {
    cfg.validate();
    arch.validate();
    if (data.targets.empty()) throw std::invalid_argument("train: empty dataset");
    TrainLog log;
    const std::size_t count = data.targets.size();
    std::vector<std::size_t> order(count);

    for (int e = 0; e < cfg.epochs; ++e) {
        const int epoch = state.epoch;
        const double lr = cfg.lr_at(epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), state.rng);

        EpochRecord rec;
        rec.epoch = epoch;
        double loss_sum = 0.0, t_sum = 0.0;
        std::size_t items = 0, nonconverged = 0;
        for (std::size_t from = 0; from < count; from += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t to = std::min(count, from + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Mask> masks;
            std::vector<const Tensor*> targets;
            for (std::size_t i = from; i < to; ++i) {
                const Tensor& y = data.targets[order[i]];
                targets.push_back(&y);
                masks.push_back(data.make_mask(y, state.rng));
            }
            std::vector<const Mask*> mask_ptrs;
            for (const Mask& m : masks) mask_ptrs.push_back(&m);
            const Batch batch{stack(targets), stack(mask_ptrs)};
            TD1Gradient g;
            try {
                g = td1_gradient(state.weights, arch, batch, cfg);
            } catch (const std::exception& ex) {
                throw std::runtime_error("epoch " + std::to_string(epoch) + ", batch at item " +
                                         std::to_string(from) + ": " + ex.what());
            }
            optimizer_step(state.optimizer, state.weights, g.grads, cfg.optimizer, lr);
            const double n = static_cast<double>(to - from);
            loss_sum += g.loss * n;
            for (const auto& r : g.reports) {
                t_sum += r.t_star;
                nonconverged += r.converged ? 0 : 1;
            }
            items += to - from;
        }
        rec.loss = loss_sum / static_cast<double>(items);
        rec.mean_t_star = t_sum / static_cast<double>(items);
        rec.nonconverged_fraction = static_cast<double>(nonconverged) / static_cast<double>(items);
        if (!std::isfinite(rec.loss)) throw NumericError("epoch " + std::to_string(epoch) + ": non-finite loss");
        ++state.epoch;
        if (hooks.on_epoch) hooks.on_epoch(state, rec);
        log.epochs.push_back(std::move(rec));
    }
    return log;
}

}  // namespace cban
