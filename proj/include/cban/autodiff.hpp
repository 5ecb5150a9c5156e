#pragma once

#include "cban/activation.hpp"
#include "cban/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace cban {

class Tape;
class GradSink;

struct TapeError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Handle to a value recorded on a `Tape`. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records whole-tensor operations for reverse-mode differentiation.
///
/// Single owner; not thread safe. Every recorded value is checked for
/// finiteness, so a NaN is reported at the operation that produced it.
class Tape {
public:
    /// Receives the upstream gradient and the node's own output value.
    using Backward =
        std::function<void(const Tensor& upstream, const Tensor& output, GradSink& sink)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// A differentiable leaf.
    Var input(Tensor value);
    /// A leaf that never receives gradient.
    Var constant(Tensor value);
    Var record(Tensor value, std::initializer_list<Var> parents, Backward backward,
               const char* op);

    std::size_t size() const { return nodes_.size(); }
    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    void clear() { nodes_.clear(); }

private:
    friend std::vector<Tensor> grad(Tape&, const Var&, std::span<const Var>);

    struct Node {
        Tensor value;
        Backward backward;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
};

/// Gradient accumulator handed to each backward closure.
class GradSink {
public:
    GradSink(const Tape& tape, std::vector<Tensor>& grads, std::vector<bool>& present)
        : tape_(tape), grads_(grads), present_(present) {}

    bool wants(const Var& v) const { return tape_.requires_grad(v.id()); }

    void add(const Var& v, const Tensor& g);

    template <typename Expr>
    void add_vec(const Var& v, const Expr& g) {
        if (!wants(v)) return;
        slot(v).vec() += g;
    }

private:
    Tensor& slot(const Var& v);

    const Tape& tape_;
    std::vector<Tensor>& grads_;
    std::vector<bool>& present_;
};

/// Gradients of the scalar `output` with respect to each of `inputs`.
///
/// Throws TapeError if the output is not a single element or a value is from another tape.
std::vector<Tensor> grad(Tape& tape, const Var& output, std::span<const Var> inputs);

inline std::vector<Tensor> grad(Tape& tape, const Var& output, std::initializer_list<Var> inputs) {
    return grad(tape, output, std::span<const Var>(inputs.begin(), inputs.size()));
}

inline const Tensor& value_of(const Var& v) { return v.value(); }

// ---------------------------------------------------------------------------
// Recorded operations. Names mirror the plain Tensor functions so that generic
// code can be written once over Tensor and Var.

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator*(double s, const Var& a);
Var operator+(const Var& a, const Tensor& c);
Var operator-(const Var& a, const Tensor& c);
Var operator*(const Var& a, const Tensor& c);

Var reshape(const Var& x, Shape shape);
Var dense(const Var& x, const Var& w);
Var dense_transposed(const Var& x, const Var& w, Shape out_shape);
Var add_bias(const Var& x, const Var& b);
Var conv2d_half(const Var& x, const Var& k);
Var reverse_kernel(const Var& k);
Var avg_pool2(const Var& x);
Var nn_upsample2(const Var& x);

Var activation(const ActivationKind& k, const Var& z);
Var inverse_activation(const ActivationKind& k, const Var& x);
Var barrier(const ActivationKind& k, const Var& x);

/// Clamps elementwise into [lo, hi]; gradient is zero where clipped.
Var clip(const Var& x, double lo, double hi);

/// On masked positions: mix * values + (1 - mix) * x; elsewhere x.
Var blend(const Var& x, const Tensor& values, const Mask& mask, double mix);

/// log(1 + exp(x)), returning x directly once x > 30.
Var softplus(const Var& x);

/// Sum of all elements; a single-element result.
Var sum(const Var& x);

/// Per-item sums along the leading (batch) axis: (N, ...) -> (N).
Var sum_items(const Var& x);

}  // namespace cban
