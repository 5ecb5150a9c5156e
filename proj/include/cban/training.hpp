#pragma once

#include "cban/autodiff.hpp"
#include "cban/dynamics.hpp"
#include "cban/random.hpp"
#include "cban/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cban {

enum class LossKind { SE, DeltaE, DeltaEPlus };

struct OptimizerConfig {
    /// SgdL2 / SgdLinf renormalize each parameter block's gradient to unit norm.
    enum class Kind { SgdL2, SgdLinf, Adam };

    Kind kind = Kind::SgdL2;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    LossKind loss = LossKind::DeltaEPlus;
    OptimizerConfig optimizer;
    /// (epoch, multiplier): from that epoch on the learning rate is lr * multiplier.
    std::vector<std::pair<int, double>> lr_schedule;
    double theta = 0.01;
    int max_iters = 100;
    Index batch_size = 20;
    int epochs = 0;
    std::uint64_t seed = 0;
    double temperature = 1.0;
    EvidenceConstraint::Mode evidence_mode = EvidenceConstraint::Mode::Clamp;
    double evidence_strength = 1.0;
    /// Batch chunks evaluated on separate tapes in parallel.
    int threads = 1;

    void validate() const;
    double lr_at(int epoch) const;
};

/// Visible layer clamped to the targets vs. left free, sharing one hidden state.
struct ContrastivePair {
    Tensor clamped_visible;
    Tensor unclamped_visible;
    std::vector<Tensor> hidden;
};

/// Targets (batched visible shape) with the observed-unit mask.
struct Batch {
    Tensor targets;
    Mask mask;

    Index size() const { return targets.dim(0); }
};

/// Visible activation implied by the current hidden state, with no evidence applied.
Tensor unclamped_visible(const NetState& state, const WeightBundle& w, const ArchSpec& arch);

/// Sum of squared differences over all visible units.
double loss_se(const Tensor& v_tilde, const Tensor& y);

/// E(clamped) - E(unclamped) in closed form:
/// sum_i f^{-1}(v~_i)(v~_i - y_i) + rho(y_i) - rho(v~_i).
double loss_delta_e(const ContrastivePair& pair, const ActivationKind& kind);

/// softplus of loss_delta_e.
double loss_delta_e_plus(const ContrastivePair& pair, const ActivationKind& kind);

/// Saturation guard applied to v~ before f^{-1} under tanh.
inline constexpr double kInverseClip = 0.999999;

/// Evidence constraint for a batch under the configured mode.
EvidenceConstraint batch_evidence(const Batch& batch, const TrainConfig& cfg);

struct TD1Output {
    Var total_loss;
    std::vector<SettleReport> reports;
};

/// Unrolled TD(1) forward pass recorded on `tape`: the configured loss is
/// taken after every sweep t = 1..t* for each item, summed over t and
/// averaged over items.
TD1Output td1_forward(Tape& tape, const BasicWeights<Var>& w, const ArchSpec& arch,
                      const Batch& batch, const TrainConfig& cfg);

/// The same loss computed without recording (for finite-difference checks).
double td1_loss(const WeightBundle& w, const ArchSpec& arch, const Batch& batch,
                const TrainConfig& cfg, std::vector<SettleReport>* reports = nullptr);

struct TD1Gradient {
    double loss = 0.0;
    std::vector<Tensor> grads;  // parameters() order
    std::vector<SettleReport> reports;
};

/// Loss and gradients; with cfg.threads > 1 the batch is split across tapes
/// and the chunk gradients are combined in chunk order.
TD1Gradient td1_gradient(const WeightBundle& w, const ArchSpec& arch, const Batch& batch,
                         const TrainConfig& cfg);

struct OptimizerState {
    OptimizerConfig::Kind kind = OptimizerConfig::Kind::SgdL2;
    std::int64_t step = 0;
    std::vector<Tensor> m;  // Adam first moments
    std::vector<Tensor> v;  // Adam second moments
};

OptimizerState make_optimizer_state(const OptimizerConfig& cfg, const WeightBundle& w);

void optimizer_step(OptimizerState& state, WeightBundle& w, const std::vector<Tensor>& grads,
                    const OptimizerConfig& cfg, double lr);

/// Standard deviation used for a fully connected pair of sizes n_lo, n_hi.
double fc_init_std(Index n_lo, Index n_hi);

/// Gaussian weights (fc: fc_init_std, conv: arch.conv_init_std), zero biases.
WeightBundle init_weights(const ArchSpec& arch, std::uint64_t seed);

struct Dataset {
    std::vector<Tensor> targets;  // unbatched visible-layer tensors
    /// Observed-unit mask for one example, regenerated every epoch.
    std::function<Mask(const Tensor& target, Rng& rng)> make_mask;
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double mean_t_star = 0.0;
    double nonconverged_fraction = 0.0;
    std::vector<std::pair<std::string, double>> metrics;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
};

struct TrainState {
    WeightBundle weights;
    OptimizerState optimizer;
    Rng rng;
    int epoch = 0;  // epochs completed
};

struct TrainHooks {
    /// Called after each epoch; may append metrics to the record.
    std::function<void(const TrainState&, EpochRecord&)> on_epoch;
};

/// Stacks single-item tensors into a batch along a new leading axis.
Tensor stack(const std::vector<const Tensor*>& items);
Mask stack(const std::vector<const Mask*>& items);

/// Epochs of shuffled mini-batches: TD(1) gradient, then an optimizer step.
TrainLog train(const Dataset& data, const ArchSpec& arch, const TrainConfig& cfg,
               TrainState& state, const TrainHooks& hooks = {});

/// Fresh state: initialized weights, optimizer state and the seeded generator.
TrainState start_training(const ArchSpec& arch, const TrainConfig& cfg);

}  // namespace cban
