#pragma once

#include "cban/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cban {

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Unit nonlinearity: tanh, or the piecewise-linear leaky sigmoid (identity on
/// [-1,1], slope `alpha` outside).
struct ActivationKind {
    enum class Type { Tanh, LeakySigmoid };
    Type type = Type::Tanh;
    double alpha = 0.0;

    static ActivationKind tanh() { return {Type::Tanh, 0.0}; }
    static ActivationKind leaky_sigmoid(double alpha) {
        if (!(alpha > 0.0 && alpha < 1.0))
            throw std::invalid_argument("leaky sigmoid slope must lie in (0,1), got " +
                                        std::to_string(alpha));
        return {Type::LeakySigmoid, alpha};
    }

    bool is_tanh() const { return type == Type::Tanh; }
    friend bool operator==(const ActivationKind&, const ActivationKind&) = default;
};

// Scalar forms. The tensor versions below and the tape ops use these.
namespace act {

inline double f(const ActivationKind& k, double z) {
    if (k.is_tanh()) return std::tanh(z);
    if (z > 1.0) return k.alpha * (z - 1.0) + 1.0;
    if (z < -1.0) return k.alpha * (z + 1.0) - 1.0;
    return z;
}

inline double df(const ActivationKind& k, double z) {
    if (k.is_tanh()) {
        const double t = std::tanh(z);
        return 1.0 - t * t;
    }
    return (z > 1.0 || z < -1.0) ? k.alpha : 1.0;
}

/// Derivative expressed through the output value y = f(z).
inline double df_from_output(const ActivationKind& k, double y) {
    if (k.is_tanh()) return 1.0 - y * y;
    return (y > 1.0 || y < -1.0) ? k.alpha : 1.0;
}

inline double finv(const ActivationKind& k, double x) {
    if (k.is_tanh()) return std::atanh(x);
    if (x > 1.0) return (x - 1.0) / k.alpha + 1.0;
    if (x < -1.0) return (x + 1.0) / k.alpha - 1.0;
    return x;
}

inline double dfinv(const ActivationKind& k, double x) {
    if (k.is_tanh()) return 1.0 / (1.0 - x * x);
    return (x > 1.0 || x < -1.0) ? 1.0 / k.alpha : 1.0;
}

inline double xlogx(double v) { return v > 0.0 ? v * std::log(v) : 0.0; }

/// Integral of the inverse activation from 0 to x.
inline double rho(const ActivationKind& k, double x) {
    if (k.is_tanh()) return 0.5 * xlogx(1.0 + x) + 0.5 * xlogx(1.0 - x);
    const double a = k.alpha;
    if (x > 1.0) return (x * x + (1.0 - a) * (1.0 - 2.0 * x)) / (2.0 * a);
    if (x < -1.0) return (x * x + (1.0 - a) * (1.0 + 2.0 * x)) / (2.0 * a);
    return 0.5 * x * x;
}

}  // namespace act

namespace detail {

inline void check_open_unit(const Tensor& x, const char* what) {
    for (Index i = 0; i < x.size(); ++i)
        if (!(std::abs(x[i]) < 1.0))
            throw DomainError(std::string(what) + ": |x| must be < 1 for tanh, element " +
                              std::to_string(i) + " = " + std::to_string(x[i]));
}

inline void check_closed_unit(const Tensor& x, const char* what) {
    for (Index i = 0; i < x.size(); ++i)
        if (!(std::abs(x[i]) <= 1.0))
            throw DomainError(std::string(what) + ": |x| must be <= 1 for tanh, element " +
                              std::to_string(i) + " = " + std::to_string(x[i]));
}

}  // namespace detail

inline Tensor activation(const ActivationKind& k, const Tensor& z) {
    Tensor out(z.shape());
    if (k.is_tanh())
        out.vec() = z.vec().array().tanh().matrix();
    else
        for (Index i = 0; i < z.size(); ++i) out[i] = act::f(k, z[i]);
    require_finite(out, "activation");
    return out;
}

/// f^{-1}; tanh requires |x| < 1 and reports the offending index otherwise.
inline Tensor inverse_activation(const ActivationKind& k, const Tensor& x) {
    if (k.is_tanh()) detail::check_open_unit(x, "inverse_activation");
    Tensor out(x.shape());
    for (Index i = 0; i < x.size(); ++i) out[i] = act::finv(k, x[i]);
    require_finite(out, "inverse_activation");
    return out;
}

/// Barrier function rho(x) = integral_0^x f^{-1}.
inline Tensor barrier(const ActivationKind& k, const Tensor& x) {
    if (k.is_tanh()) detail::check_closed_unit(x, "barrier");
    Tensor out(x.shape());
    for (Index i = 0; i < x.size(); ++i) out[i] = act::rho(k, x[i]);
    return out;
}

}  // namespace cban
