#pragma once

#include "cban/activation.hpp"
#include "cban/tensor.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cban {

struct ArchError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class LayerRole { Visible, Hidden };

/// One layer of a bipartite stack.
///
/// `pool_before` applies 2x2 average pooling on the upward map into this layer
/// and 2x2 nearest-neighbor upsampling on the downward map out of it.
struct LayerSpec {
    enum class Kind { FullyConnected, Conv };

    Kind kind = Kind::FullyConnected;
    Index units = 0;  // fully connected only
    Index channels = 0, height = 0, width = 0;  // conv only
    bool pool_before = false;
    LayerRole role = LayerRole::Hidden;

    static LayerSpec fc(Index units, LayerRole role = LayerRole::Hidden) {
        LayerSpec s;
        s.kind = Kind::FullyConnected;
        s.units = units;
        s.role = role;
        return s;
    }
    static LayerSpec conv(Index channels, Index height, Index width, bool pool_before = false,
                          LayerRole role = LayerRole::Hidden) {
        LayerSpec s;
        s.kind = Kind::Conv;
        s.channels = channels;
        s.height = height;
        s.width = width;
        s.pool_before = pool_before;
        s.role = role;
        return s;
    }

    bool is_conv() const { return kind == Kind::Conv; }
    Shape shape() const { return is_conv() ? Shape{channels, height, width} : Shape{units}; }
    Shape batched_shape(Index n) const {
        return is_conv() ? Shape{n, channels, height, width} : Shape{n, units};
    }
    Index size() const { return is_conv() ? channels * height * width : units; }
    /// Length of the bias vector: per channel for conv, per unit for fc.
    Index bias_size() const { return is_conv() ? channels : units; }
};

/// Layer list (index 0 is the visible end), kernel sizes per adjacent conv
/// pair, the unit nonlinearity and the weight-symmetry flag.
struct ArchSpec {
    std::vector<LayerSpec> layers;
    std::vector<Index> kernel_sizes;  // one per adjacent pair; ignored for fc pairs
    ActivationKind activation = ActivationKind::tanh();
    /// When false, reverse weights are stored independently (asymmetric ablation).
    bool symmetric = true;
    /// Standard deviation for conv kernels at initialization.
    double conv_init_std = 0.01;

    std::size_t num_layers() const { return layers.size(); }
    std::size_t num_pairs() const { return layers.empty() ? 0 : layers.size() - 1; }
    bool is_conv_pair(std::size_t pair) const {
        return layers[pair].is_conv() && layers[pair + 1].is_conv();
    }
    Index kernel_size(std::size_t pair) const {
        return pair < kernel_sizes.size() ? kernel_sizes[pair] : 3;
    }

    /// Throws ArchError describing the first violated constraint.
    void validate() const;

    /// Fully connected stack with layer 0 visible.
    static ArchSpec fully_connected(std::vector<Index> units,
                                    ActivationKind act = ActivationKind::tanh());
};

/// Trainable parameters. `forward[p]` maps layer p to p+1: an (out, in)
/// matrix for fc pairs, a (q, r, a, b) kernel for conv pairs. `reverse` is
/// empty in symmetric mode, where the reverse map is always derived.
template <class V>
struct BasicWeights {
    std::vector<V> forward;
    std::vector<V> bias;
    std::vector<V> reverse;
};

using WeightBundle = BasicWeights<Tensor>;

/// Parameters in declaration order: forward maps, biases, then reverse maps.
std::vector<Tensor*> parameters(WeightBundle& w);
std::vector<const Tensor*> parameters(const WeightBundle& w);

/// Zero weights with the right shapes for `arch`.
WeightBundle zero_weights(const ArchSpec& arch);

/// How an observation constrains a visible layer.
struct EvidenceConstraint {
    enum class Mode { Clamp, ExternalBias, ConvexMix, Replicated };

    Mode mode = Mode::Clamp;
    /// Bias scale for ExternalBias; mix weight for ConvexMix.
    double strength = 1.0;
    Mask mask;      // nonzero = observed, batched layer shape
    Tensor values;  // only masked entries are meaningful

    static EvidenceConstraint clamp(Mask mask, Tensor values) {
        return {Mode::Clamp, 1.0, std::move(mask), std::move(values)};
    }
};

struct NetState {
    std::vector<Tensor> activations;
    std::vector<std::optional<EvidenceConstraint>> evidence;

    Index batch() const { return activations.empty() ? 0 : activations.front().dim(0); }
};

/// Zero state for a batch of `n`, with evidence on layer 0 (if given) applied:
/// observed units start at their values, everything else at 0.
NetState initial_state(const ArchSpec& arch, Index n,
                       std::optional<EvidenceConstraint> visible_evidence = std::nullopt);

/// Checks the evidence against the layer shape and the activation range.
void validate_evidence(const ArchSpec& arch, std::size_t layer, const EvidenceConstraint& ev,
                       Index batch);

// ---------------------------------------------------------------------------
// Generic layer maps, shared by plain settling (V = Tensor) and recorded
// training (V = Var).

namespace detail {

/// Weights plus the derived reverse kernels, prepared once per forward pass.
template <class V>
struct Maps {
    const ArchSpec* arch;
    const BasicWeights<V>* w;
    std::vector<V> reverse;  // per pair: reversed conv kernel or asymmetric reverse weights

    Maps(const ArchSpec& a, const BasicWeights<V>& weights) : arch(&a), w(&weights) {
        reverse.resize(a.num_pairs());
        for (std::size_t p = 0; p < a.num_pairs(); ++p) {
            if (!a.symmetric)
                reverse[p] = weights.reverse.at(p);
            else if (a.is_conv_pair(p))
                reverse[p] = reverse_kernel(weights.forward[p]);
        }
    }

    /// Contribution to layer p+1 from layer p.
    V up(std::size_t p, const V& lower) const {
        const LayerSpec& dst = arch->layers[p + 1];
        if (arch->is_conv_pair(p))
            return conv2d_half(dst.pool_before ? avg_pool2(lower) : lower, w->forward[p]);
        V out = dense(lower, w->forward[p]);
        if (dst.is_conv()) return reshape(out, dst.batched_shape(value_of(lower).dim(0)));
        return out;
    }

    /// Contribution to layer p from layer p+1.
    V down(std::size_t p, const V& upper) const {
        const LayerSpec& src = arch->layers[p + 1];
        const Shape lower_shape = arch->layers[p].batched_shape(value_of(upper).dim(0));
        if (arch->is_conv_pair(p)) {
            V out = conv2d_half(upper, reverse[p]);
            return src.pool_before ? nn_upsample2(out) : out;
        }
        if (arch->symmetric) return dense_transposed(upper, w->forward[p], lower_shape);
        return reshape(dense(upper, reverse[p]), lower_shape);
    }

    /// Net input to layer l, without any evidence term.
    V net_input(std::size_t l, std::span<const V> acts) const {
        const std::size_t last = arch->num_layers() - 1;
        if (l == 0) return add_bias(down(0, acts[1]), w->bias[0]);
        if (l == last) return add_bias(up(l - 1, acts[l - 1]), w->bias[l]);
        return add_bias(up(l - 1, acts[l - 1]) + down(l, acts[l + 1]), w->bias[l]);
    }

    /// Layer update with evidence applied per its mode.
    V update(std::size_t l, std::span<const V> acts, const EvidenceConstraint* ev) const {
        V pre = net_input(l, acts);
        if (ev && ev->mode == EvidenceConstraint::Mode::ExternalBias) {
            Tensor bias = ev->values;
            for (Index i = 0; i < bias.size(); ++i) bias[i] = ev->mask[i] ? ev->strength * bias[i] : 0.0;
            pre = pre + bias;
        }
        V x = activation(arch->activation, pre);
        if (!ev) return x;
        switch (ev->mode) {
            case EvidenceConstraint::Mode::Clamp:
            case EvidenceConstraint::Mode::Replicated:
                return blend(x, ev->values, ev->mask, 1.0);
            case EvidenceConstraint::Mode::ConvexMix:
                return blend(x, ev->values, ev->mask, ev->strength);
            case EvidenceConstraint::Mode::ExternalBias:
                break;
        }
        return x;
    }
};

inline const EvidenceConstraint* evidence_at(
    const std::vector<std::optional<EvidenceConstraint>>& evidence, std::size_t l) {
    return l < evidence.size() && evidence[l] ? &*evidence[l] : nullptr;
}

/// One iteration: layers 1..L-1 upward, then L-2..0 downward (2L-2 updates).
/// `after_upward` runs between the two passes.
template <class V, class AfterUpward>
void sweep_layers(const Maps<V>& maps, std::vector<V>& acts,
                  const std::vector<std::optional<EvidenceConstraint>>& evidence,
                  AfterUpward&& after_upward) {
    const std::size_t n = acts.size();
    for (std::size_t l = 1; l < n; ++l) acts[l] = maps.update(l, acts, evidence_at(evidence, l));
    after_upward(static_cast<const std::vector<V>&>(acts));
    for (std::size_t l = n - 1; l-- > 0;) acts[l] = maps.update(l, acts, evidence_at(evidence, l));
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Net input u^l to layer `l` (0-based; layer 0 is visible), including the
/// external-bias evidence term when that mode is active.
Tensor layer_preactivation(const NetState& state, const WeightBundle& w, const ArchSpec& arch,
                           std::size_t l);

/// Returns the state with layer `l` replaced by its update.
NetState update_layer(NetState state, const WeightBundle& w, const ArchSpec& arch, std::size_t l);

/// One full iteration of layerwise updates.
NetState sweep(NetState state, const WeightBundle& w, const ArchSpec& arch);

/// Number of layer updates performed by one sweep.
inline std::size_t updates_per_sweep(const ArchSpec& arch) { return 2 * arch.num_layers() - 2; }

/// Energy of each batch item.
Eigen::VectorXd energy_per_item(const NetState& state, const WeightBundle& w, const ArchSpec& arch);

/// Energy of a single-item state (sums over the batch otherwise).
double energy(const NetState& state, const WeightBundle& w, const ArchSpec& arch);

struct SettleOptions {
    double theta = 0.01;
    int max_iters = 100;
    std::size_t cycle_window = 24;
    bool record_energy = true;
};

struct SettleReport {
    int t_star = 0;
    bool converged = false;
    /// 0 for a fixed point (or nothing detected); otherwise the detected period.
    int cycle_length = 0;
    std::vector<double> energy_trace;
    std::vector<double> max_delta_trace;
};

struct SettleResult {
    NetState state;
    std::vector<SettleReport> reports;  // one per batch item
};

/// Sweeps until max |dx| over the whole state falls below theta, per item.
/// Converged items are frozen while the rest of the batch keeps settling.
SettleResult settle(NetState state, const WeightBundle& w, const ArchSpec& arch,
                    const SettleOptions& options = {});

/// Smallest period p (with at least two periods in the window) such that
/// every state matches the one p steps earlier to within `tol`; 0 if none.
int detect_cycle(std::span<const Tensor> trailing_states, double tol);

/// max over units of the L1 norm of that unit's incoming weights, across the
/// whole bipartite connection structure.
double norm_1inf(const WeightBundle& w, const ArchSpec& arch);

/// Per-unit incoming-weight L1 norms for each layer.
std::vector<Eigen::VectorXd> incoming_l1(const WeightBundle& w, const ArchSpec& arch);

/// Largest change any free unit would make if its layer were updated now.
double fixed_point_residual(const NetState& state, const WeightBundle& w, const ArchSpec& arch);

// ---------------------------------------------------------------------------
// Synchronous full-state updates x <- f(W x + b) on a general recurrent net.

struct SyncOptions {
    double tol = 1e-8;
    int max_iters = 20000;
    std::size_t window = 24;
};

struct SyncReport {
    int iterations = 0;
    /// Detected asymptotic period: 1 fixed point, 2 two-cycle, 0 if none found.
    int period = 0;
};

SyncReport iterate_synchronous(const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                               Eigen::VectorXd x, const ActivationKind& act,
                               const SyncOptions& options = {});

}  // namespace cban
