#pragma once

// Test-only oracles. Nothing here calls into the tape; finite differences only
// use plain forward evaluation.

#include "cban/dynamics.hpp"
#include "cban/random.hpp"
#include "cban/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace cban::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double std = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> d(0.0, std);
    for (Index i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

inline Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (Index i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

inline Mask random_mask(Shape shape, Rng& rng, double p_observed) {
    Mask m(std::move(shape));
    std::bernoulli_distribution d(p_observed);
    for (Index i = 0; i < m.size(); ++i) m[i] = d(rng) ? 1 : 0;
    return m;
}

/// |a - b| / max(|a|, |b|, floor); the floor keeps vanishing gradients from
/// turning rounding noise into large relative errors.
inline double relative_error(double a, double b, double floor = 1e-7) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central finite differences of f with respect to every element of `x`.
inline Tensor finite_difference(const std::function<double()>& f, Tensor& x, double h = 1e-5) {
    Tensor g(x.shape());
    for (Index i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// Worst relative error between an analytic gradient and finite differences.
inline double worst_gradient_error(const Tensor& analytic, const Tensor& numeric) {
    double worst = 0.0;
    for (Index i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, relative_error(analytic[i], numeric[i]));
    return worst;
}

/// Symmetric fc stack with random weights and biases.
inline WeightBundle random_weights(const ArchSpec& arch, Rng& rng, double std, double bias_std = 0.1) {
    WeightBundle w = zero_weights(arch);
    for (auto& t : w.forward) t = random_tensor(t.shape(), rng, std);
    for (auto& t : w.reverse) t = random_tensor(t.shape(), rng, std);
    for (auto& t : w.bias) t = random_tensor(t.shape(), rng, bias_std);
    return w;
}

/// Random interior state (|x| < 0.9) for every layer of `arch`.
inline NetState random_state(const ArchSpec& arch, Rng& rng, Index batch = 1) {
    NetState s = initial_state(arch, batch);
    for (auto& a : s.activations) a = uniform_tensor(a.shape(), rng, -0.9, 0.9);
    return s;
}

}  // namespace cban::testing
