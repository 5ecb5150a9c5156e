#include "cban/autodiff.hpp"

#include <cmath>
#include <string>

namespace cban {

const Tensor& Var::value() const {
    if (!tape_) throw TapeError("use of an unbound Var");
    return tape_->value(id_);
}

Var Tape::input(Tensor value) {
    require_finite(value, "tape input");
    nodes_.push_back({std::move(value), {}, true});
    return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    require_finite(value, "tape constant");
    nodes_.push_back({std::move(value), {}, false});
    return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward,
                 const char* op) {
    require_finite(value, op);
    bool needs = false;
    for (const Var& p : parents) {
        if (p.tape() != this) throw TapeError(std::string(op) + ": operand from another tape");
        needs = needs || requires_grad(p.id());
    }
    nodes_.push_back({std::move(value), needs ? std::move(backward) : Backward{}, needs});
    return {this, nodes_.size() - 1};
}

Tensor& GradSink::slot(const Var& v) {
    const std::size_t id = v.id();
    if (!present_[id]) {
        grads_[id] = Tensor(tape_.value(id).shape());
        present_[id] = true;
    }
    return grads_[id];
}

void GradSink::add(const Var& v, const Tensor& g) {
    if (!wants(v)) return;
    Tensor& s = slot(v);
    require_same_shape(s.shape(), g.shape(), "gradient accumulation");
    s.vec() += g.vec();
}

std::vector<Tensor> grad(Tape& tape, const Var& output, std::span<const Var> inputs) {
    if (output.tape() != &tape) throw TapeError("grad: output is not recorded on this tape");
    if (output.value().size() != 1) throw TapeError("grad: output must be a scalar");
    for (const Var& v : inputs)
        if (v.tape() != &tape) throw TapeError("grad: input is not recorded on this tape");

    const std::size_t n = output.id() + 1;
    std::vector<Tensor> grads(n);
    std::vector<bool> present(n, false);
    std::vector<bool> keep(n, false);
    for (const Var& v : inputs) keep[v.id()] = true;

    GradSink sink(tape, grads, present);
    if (tape.requires_grad(output.id())) {
        grads[output.id()] = Tensor(output.shape(), 1.0);
        present[output.id()] = true;
    }
    for (std::size_t id = n; id-- > 0;) {
        if (!present[id]) continue;
        auto& node = tape.nodes_[id];
        if (node.backward) {
            node.backward(grads[id], node.value, sink);
            if (!keep[id]) {
                grads[id] = Tensor();
                present[id] = false;
            }
        }
    }

    std::vector<Tensor> result;
    result.reserve(inputs.size());
    for (const Var& v : inputs)
        result.push_back(present[v.id()] ? grads[v.id()] : Tensor(v.shape()));
    return result;
}

// ---------------------------------------------------------------------------

Var operator+(const Var& a, const Var& b) {
    return a.tape()->record(
        value_of(a) + value_of(b), {a, b},
        [a, b](const Tensor& g, const Tensor&, GradSink& s) {
            s.add(a, g);
            s.add(b, g);
        },
        "add");
}

Var operator-(const Var& a, const Var& b) {
    return a.tape()->record(
        value_of(a) - value_of(b), {a, b},
        [a, b](const Tensor& g, const Tensor&, GradSink& s) {
            s.add(a, g);
            s.add_vec(b, -g.vec());
        },
        "sub");
}

Var operator*(const Var& a, const Var& b) {
    return a.tape()->record(
        value_of(a) * value_of(b), {a, b},
        [a, b](const Tensor& g, const Tensor&, GradSink& s) {
            s.add_vec(a, g.vec().cwiseProduct(b.value().vec()));
            s.add_vec(b, g.vec().cwiseProduct(a.value().vec()));
        },
        "mul");
}

Var operator*(double c, const Var& a) {
    return a.tape()->record(
        c * value_of(a), {a}, [a, c](const Tensor& g, const Tensor&, GradSink& s) { s.add_vec(a, c * g.vec()); },
        "scale");
}

Var operator+(const Var& a, const Tensor& c) {
    return a.tape()->record(
        value_of(a) + c, {a}, [a](const Tensor& g, const Tensor&, GradSink& s) { s.add(a, g); }, "add_const");
}

Var operator-(const Var& a, const Tensor& c) {
    return a.tape()->record(
        value_of(a) - c, {a}, [a](const Tensor& g, const Tensor&, GradSink& s) { s.add(a, g); }, "sub_const");
}

Var operator*(const Var& a, const Tensor& c) {
    return a.tape()->record(
        value_of(a) * c, {a},
        [a, c](const Tensor& g, const Tensor&, GradSink& s) { s.add_vec(a, g.vec().cwiseProduct(c.vec())); },
        "mul_const");
}

Var reshape(const Var& x, Shape shape) {
    return x.tape()->record(
        x.value().reshaped(std::move(shape)), {x},
        [x](const Tensor& g, const Tensor&, GradSink& s) { s.add_vec(x, g.vec()); }, "reshape");
}

Var dense(const Var& x, const Var& w) {
    return x.tape()->record(
        dense(x.value(), w.value()), {x, w},
        [x, w](const Tensor& g, const Tensor&, GradSink& s) {
            const Tensor& xv = x.value();
            const Tensor& wv = w.value();
            const Index n = xv.dim(0);
            if (s.wants(x)) s.add_vec(x, dense_transposed(g, wv, xv.shape()).vec());
            if (s.wants(w)) {
                Tensor gw(wv.shape());
                gw.matrix(wv.dim(0)).noalias() = g.matrix(n).transpose() * xv.matrix(n);
                s.add(w, gw);
            }
        },
        "dense");
}

Var dense_transposed(const Var& x, const Var& w, Shape out_shape) {
    return x.tape()->record(
        dense_transposed(x.value(), w.value(), std::move(out_shape)), {x, w},
        [x, w](const Tensor& g, const Tensor&, GradSink& s) {
            const Tensor& xv = x.value();
            const Tensor& wv = w.value();
            const Index n = xv.dim(0);
            if (s.wants(x)) s.add_vec(x, dense(g, wv).vec());
            if (s.wants(w)) {
                Tensor gw(wv.shape());
                gw.matrix(wv.dim(0)).noalias() = xv.matrix(n).transpose() * g.matrix(n);
                s.add(w, gw);
            }
        },
        "dense_transposed");
}

Var add_bias(const Var& x, const Var& b) {
    return x.tape()->record(
        add_bias(x.value(), b.value()), {x, b},
        [x, b](const Tensor& g, const Tensor&, GradSink& s) {
            s.add(x, g);
            if (s.wants(b)) s.add(b, reduce_to_bias(g, b.shape()));
        },
        "add_bias");
}

Var conv2d_half(const Var& x, const Var& k) {
    return x.tape()->record(
        conv2d_half(x.value(), k.value()), {x, k},
        [x, k](const Tensor& g, const Tensor&, GradSink& s) {
            // The half-padded convolution's adjoint is convolution with the reversed kernel.
            if (s.wants(x)) s.add(x, conv2d_half(g, reverse_kernel(k.value())));
            if (s.wants(k)) s.add(k, conv2d_half_kernel_grad(x.value(), g, k.shape()));
        },
        "conv2d_half");
}

Var reverse_kernel(const Var& k) {
    return k.tape()->record(
        reverse_kernel(k.value()), {k},
        [k](const Tensor& g, const Tensor&, GradSink& s) { s.add(k, reverse_kernel(g)); }, "reverse_kernel");
}

Var avg_pool2(const Var& x) {
    return x.tape()->record(
        avg_pool2(x.value()), {x},
        [x](const Tensor& g, const Tensor&, GradSink& s) { s.add_vec(x, 0.25 * nn_upsample2(g).vec()); },
        "avg_pool2");
}

Var nn_upsample2(const Var& x) {
    return x.tape()->record(
        nn_upsample2(x.value()), {x},
        [x](const Tensor& g, const Tensor&, GradSink& s) { s.add_vec(x, 4.0 * avg_pool2(g).vec()); },
        "nn_upsample2");
}

Var activation(const ActivationKind& k, const Var& z) {
    return z.tape()->record(
        activation(k, z.value()), {z},
        [z, k](const Tensor& g, const Tensor& y, GradSink& s) {
            Tensor d(g.shape());
            for (Index i = 0; i < g.size(); ++i) d[i] = g[i] * act::df_from_output(k, y[i]);
            s.add(z, d);
        },
        "activation");
}

Var inverse_activation(const ActivationKind& k, const Var& x) {
    return x.tape()->record(
        inverse_activation(k, x.value()), {x},
        [x, k](const Tensor& g, const Tensor&, GradSink& s) {
            const Tensor& xv = x.value();
            Tensor d(g.shape());
            for (Index i = 0; i < g.size(); ++i) d[i] = g[i] * act::dfinv(k, xv[i]);
            s.add(x, d);
        },
        "inverse_activation");
}

Var barrier(const ActivationKind& k, const Var& x) {
    return x.tape()->record(
        barrier(k, x.value()), {x},
        [x, k](const Tensor& g, const Tensor&, GradSink& s) {
            const Tensor& xv = x.value();
            Tensor d(g.shape());
            for (Index i = 0; i < g.size(); ++i) d[i] = g[i] * act::finv(k, xv[i]);
            s.add(x, d);
        },
        "barrier");
}

Var clip(const Var& x, double lo, double hi) {
    Tensor out = x.value();
    out.vec() = out.vec().cwiseMax(lo).cwiseMin(hi);
    return x.tape()->record(
        std::move(out), {x},
        [x, lo, hi](const Tensor& g, const Tensor&, GradSink& s) {
            const Tensor& xv = x.value();
            Tensor d(g.shape());
            for (Index i = 0; i < g.size(); ++i) d[i] = (xv[i] >= lo && xv[i] <= hi) ? g[i] : 0.0;
            s.add(x, d);
        },
        "clip");
}

Var blend(const Var& x, const Tensor& values, const Mask& mask, double mix) {
    return x.tape()->record(
        blend(x.value(), values, mask, mix), {x},
        [x, mask, mix](const Tensor& g, const Tensor&, GradSink& s) {
            Tensor d = g;
            for (Index i = 0; i < d.size(); ++i)
                if (mask[i]) d[i] *= (1.0 - mix);
            s.add(x, d);
        },
        "blend");
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var softplus(const Var& x) {
    Tensor out(x.shape());
    for (Index i = 0; i < out.size(); ++i) out[i] = softplus(x.value()[i]);
    return x.tape()->record(
        std::move(out), {x},
        [x](const Tensor& g, const Tensor&, GradSink& s) {
            const Tensor& xv = x.value();
            Tensor d(g.shape());
            for (Index i = 0; i < g.size(); ++i) d[i] = g[i] * (xv[i] > 30.0 ? 1.0 : logistic(xv[i]));
            s.add(x, d);
        },
        "softplus");
}

Var sum(const Var& x) {
    return x.tape()->record(
        Tensor::scalar(x.value().vec().sum()), {x},
        [x](const Tensor& g, const Tensor&, GradSink& s) {
            s.add_vec(x, Tensor::Vector::Constant(x.value().size(), g[0]));
        },
        "sum");
}

Var sum_items(const Var& x) {
    const Tensor& xv = x.value();
    const Index n = xv.dim(0);
    Tensor out({n});
    out.vec() = xv.matrix(n).rowwise().sum();
    return x.tape()->record(
        std::move(out), {x},
        [x](const Tensor& g, const Tensor&, GradSink& s) {
            const Tensor& v = x.value();
            const Index rows = v.dim(0);
            Tensor d(v.shape());
            d.matrix(rows).colwise() = g.vec();
            s.add(x, d);
        },
        "sum_items");
}

}  // namespace cban
