#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace cban {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when an operation would produce a NaN or an infinity.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

inline Index shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>{});
}

/// Dense row-major tensor of arbitrary rank.
///
/// Feature maps are laid out (channels, height, width), with an optional
/// leading batch dimension. The storage is a plain Eigen column vector, so
/// `vec()` can be used directly inside Eigen expressions.
template <typename Scalar>
class BasicTensor {
public:
    using scalar_type = Scalar;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    /// A rank-0 tensor holding a single zero.
    BasicTensor() : data_(Vector::Zero(1)) {}

    explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
        : shape_(std::move(shape)) {
        check_extents();
        data_ = Vector::Constant(shape_size(shape_), fill);
    }

    BasicTensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (shape_size(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + to_string(shape_));
    }

    BasicTensor(Shape shape, std::initializer_list<Scalar> values)
        : BasicTensor(std::move(shape), Vector(Eigen::Map<const Vector>(
                                            values.begin(), static_cast<Index>(values.size())))) {}

    static BasicTensor scalar(Scalar value) {
        BasicTensor t;
        t.data_(0) = value;
        return t;
    }

    static BasicTensor zeros_like(const BasicTensor& other) { return BasicTensor(other.shape_); }

    const Shape& shape() const { return shape_; }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index size() const { return data_.size(); }
    Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

    Vector& vec() { return data_; }
    const Vector& vec() const { return data_; }
    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Scalar& operator[](Index i) { return data_(i); }
    Scalar operator[](Index i) const { return data_(i); }

    template <typename... Is>
    Scalar& operator()(Is... idx) {
        return data_(offset({static_cast<Index>(idx)...}));
    }
    template <typename... Is>
    Scalar operator()(Is... idx) const {
        return data_(offset({static_cast<Index>(idx)...}));
    }

    /// Row-major view with `rows` rows; the remaining extents are flattened into columns.
    Eigen::Map<RowMatrix> matrix(Index rows) {
        return {data_.data(), rows, rows ? size() / rows : 0};
    }
    Eigen::Map<const RowMatrix> matrix(Index rows) const {
        return {data_.data(), rows, rows ? size() / rows : 0};
    }

    BasicTensor reshaped(Shape shape) const {
        if (shape_size(shape) != size())
            throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
        return BasicTensor(std::move(shape), data_);
    }

    /// Slice along the leading axis: item `i` of a batched tensor.
    BasicTensor item(Index i) const {
        Shape inner(shape_.begin() + 1, shape_.end());
        const Index n = shape_size(inner);
        return BasicTensor(inner, data_.segment(i * n, n));
    }

    void set_item(Index i, const BasicTensor& value) {
        const Index n = size() / shape_.front();
        if (value.size() != n) throw ShapeError("set_item: item size mismatch");
        data_.segment(i * n, n) = value.vec();
    }

    template <typename To>
    BasicTensor<To> cast() const {
        return BasicTensor<To>(shape_, data_.template cast<To>());
    }

    bool all_finite() const {
        if constexpr (std::is_floating_point_v<Scalar>)
            return data_.allFinite();
        else
            return true;
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_extents() const {
        for (Index e : shape_)
            if (e < 1) throw ShapeError("tensor extents must be >= 1, got " + to_string(shape_));
    }

    Index offset(std::initializer_list<Index> idx) const {
        if (static_cast<std::size_t>(idx.size()) != shape_.size())
            throw ShapeError("index rank does not match tensor rank");
        Index off = 0;
        std::size_t axis = 0;
        for (Index i : idx) {
            if (i < 0 || i >= shape_[axis]) throw std::out_of_range("tensor index out of range");
            off = off * shape_[axis++] + i;
        }
        return off;
    }

    Shape shape_;
    Vector data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;
/// Boolean tensor; nonzero means "observed".
using Mask = BasicTensor<std::uint8_t>;

/// Identity for plain tensors; the recorded overload returns a Var's value.
inline const Tensor& value_of(const Tensor& t) { return t; }

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b)
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                         to_string(b));
}

template <typename Scalar>
const BasicTensor<Scalar>& require_finite(const BasicTensor<Scalar>& t, const char* what) {
    if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite value produced");
    return t;
}

template <typename Scalar>
BasicTensor<Scalar> operator+(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    return BasicTensor<Scalar>(a.shape(), a.vec() + b.vec());
}

template <typename Scalar>
BasicTensor<Scalar> operator-(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    return BasicTensor<Scalar>(a.shape(), a.vec() - b.vec());
}

/// Elementwise (Hadamard) product.
template <typename Scalar>
BasicTensor<Scalar> operator*(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    return BasicTensor<Scalar>(a.shape(), a.vec().cwiseProduct(b.vec()));
}

template <typename Scalar>
BasicTensor<Scalar> operator*(Scalar s, const BasicTensor<Scalar>& a) {
    return BasicTensor<Scalar>(a.shape(), s * a.vec());
}

template <typename Scalar>
Scalar inner(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    require_same_shape(a.shape(), b.shape(), "inner");
    return a.vec().dot(b.vec());
}

template <typename Scalar>
Scalar max_abs_diff(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    return a.size() ? (a.vec() - b.vec()).cwiseAbs().maxCoeff() : Scalar(0);
}

template <typename Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& a, Shape shape) {
    return a.reshaped(std::move(shape));
}

// ---------------------------------------------------------------------------
// Structural maps. Feature maps are (C,H,W) or batched (N,C,H,W).

namespace detail {

struct MapDims {
    Index batch, channels, height, width;
};

inline MapDims feature_dims(const Shape& s, const char* what) {
    if (s.size() == 3) return {1, s[0], s[1], s[2]};
    if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
    throw ShapeError(std::string(what) + ": expected (C,H,W) or (N,C,H,W), got " + to_string(s));
}

inline Shape with_dims(const Shape& like, Index c, Index h, Index w) {
    if (like.size() == 3) return {c, h, w};
    return {like[0], c, h, w};
}

/// Columns of the zero-padded neighborhoods: rows are (r, a, b), columns are pixels.
template <typename Scalar>
void im2col(const Scalar* x, Index channels, Index height, Index width, Index kh, Index kw,
            Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols) {
    const Index ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    cols.setZero(channels * kh * kw, height * width);
    for (Index r = 0; r < channels; ++r)
        for (Index a = 0; a < kh; ++a)
            for (Index b = 0; b < kw; ++b) {
                Scalar* row = cols.row((r * kh + a) * kw + b).data();
                for (Index i = 0; i < height; ++i) {
                    const Index si = i + a - ph;
                    if (si < 0 || si >= height) continue;
                    const Scalar* src = x + (r * height + si) * width;
                    const Index j0 = std::max<Index>(0, pw - b);
                    const Index j1 = std::min<Index>(width, width + pw - b);
                    for (Index j = j0; j < j1; ++j) row[i * width + j] = src[j + b - pw];
                }
            }
}

}  // namespace detail

/// Checks that `k` is a (q, r, a, b) kernel with odd spatial extents.
template <typename Scalar>
void validate_kernel(const BasicTensor<Scalar>& k) {
    if (k.rank() != 4) throw ShapeError("kernel must be rank 4 (q,r,a,b), got " + to_string(k.shape()));
    if (k.dim(2) % 2 == 0 || k.dim(3) % 2 == 0)
        throw ShapeError("kernel spatial extents must be odd, got " + to_string(k.shape()));
}

/// Half-padded (same-size, zero padded) convolution.
///
/// out[q,i,j] = sum_{r,a,b} k[q,r,a,b] * x[r, i+a-(A-1)/2, j+b-(B-1)/2]
template <typename Scalar>
BasicTensor<Scalar> conv2d_half(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& k) {
    using RowMatrix = typename BasicTensor<Scalar>::RowMatrix;
    validate_kernel(k);
    const auto d = detail::feature_dims(x.shape(), "conv2d_half");
    if (k.dim(1) != d.channels)
        throw ShapeError("conv2d_half: input has " + std::to_string(d.channels) +
                         " channels, kernel expects " + std::to_string(k.dim(1)));
    const Index q = k.dim(0), kh = k.dim(2), kw = k.dim(3), hw = d.height * d.width;
    BasicTensor<Scalar> out(detail::with_dims(x.shape(), q, d.height, d.width));
    const auto kmat = k.matrix(q);
    RowMatrix cols;
    for (Index n = 0; n < d.batch; ++n) {
        detail::im2col(x.data() + n * d.channels * hw, d.channels, d.height, d.width, kh, kw, cols);
        Eigen::Map<RowMatrix>(out.data() + n * q * hw, q, hw).noalias() = kmat * cols;
    }
    return out;
}

/// Reverse-direction kernel: transpose the channel axes and flip both spatial axes.
///
/// out[r,q,a,b] = k[q,r,A-1-a,B-1-b]; applying it twice is the identity.
template <typename Scalar>
BasicTensor<Scalar> reverse_kernel(const BasicTensor<Scalar>& k) {
    if (k.rank() != 4) throw ShapeError("reverse_kernel: kernel must be rank 4");
    const Index q = k.dim(0), r = k.dim(1), a = k.dim(2), b = k.dim(3);
    BasicTensor<Scalar> out({r, q, a, b});
    for (Index iq = 0; iq < q; ++iq)
        for (Index ir = 0; ir < r; ++ir)
            for (Index ia = 0; ia < a; ++ia)
                for (Index ib = 0; ib < b; ++ib)
                    out(ir, iq, ia, ib) = k(iq, ir, a - 1 - ia, b - 1 - ib);
    return out;
}

/// Gradient of sum(dy * conv2d_half(x, k)) with respect to the kernel.
template <typename Scalar>
BasicTensor<Scalar> conv2d_half_kernel_grad(const BasicTensor<Scalar>& x,
                                            const BasicTensor<Scalar>& dy,
                                            const Shape& kernel_shape) {
    using RowMatrix = typename BasicTensor<Scalar>::RowMatrix;
    const auto d = detail::feature_dims(x.shape(), "conv2d_half_kernel_grad");
    const Index q = kernel_shape[0], kh = kernel_shape[2], kw = kernel_shape[3];
    const Index hw = d.height * d.width;
    BasicTensor<Scalar> dk(kernel_shape);
    auto dkmat = dk.matrix(q);
    RowMatrix cols;
    for (Index n = 0; n < d.batch; ++n) {
        detail::im2col(x.data() + n * d.channels * hw, d.channels, d.height, d.width, kh, kw, cols);
        dkmat.noalias() += Eigen::Map<const RowMatrix>(dy.data() + n * q * hw, q, hw) * cols.transpose();
    }
    return dk;
}

/// 2x2 average pooling; spatial extents must be even.
template <typename Scalar>
BasicTensor<Scalar> avg_pool2(const BasicTensor<Scalar>& x) {
    const auto d = detail::feature_dims(x.shape(), "avg_pool2");
    if (d.height % 2 || d.width % 2)
        throw ShapeError("avg_pool2: spatial extents must be even, got " + to_string(x.shape()));
    const Index h = d.height / 2, w = d.width / 2;
    BasicTensor<Scalar> out(detail::with_dims(x.shape(), d.channels, h, w));
    const Scalar* src = x.data();
    Scalar* dst = out.data();
    for (Index plane = 0; plane < d.batch * d.channels; ++plane) {
        const Scalar* p = src + plane * d.height * d.width;
        Scalar* o = dst + plane * h * w;
        for (Index i = 0; i < h; ++i)
            for (Index j = 0; j < w; ++j) {
                const Scalar* top = p + 2 * i * d.width + 2 * j;
                o[i * w + j] = (top[0] + top[1] + top[d.width] + top[d.width + 1]) / Scalar(4);
            }
    }
    return out;
}

/// 2x2 nearest-neighbor upsampling: every element becomes a 2x2 block.
template <typename Scalar>
BasicTensor<Scalar> nn_upsample2(const BasicTensor<Scalar>& x) {
    const auto d = detail::feature_dims(x.shape(), "nn_upsample2");
    const Index h = d.height * 2, w = d.width * 2;
    BasicTensor<Scalar> out(detail::with_dims(x.shape(), d.channels, h, w));
    const Scalar* src = x.data();
    Scalar* dst = out.data();
    for (Index plane = 0; plane < d.batch * d.channels; ++plane) {
        const Scalar* p = src + plane * d.height * d.width;
        Scalar* o = dst + plane * h * w;
        for (Index i = 0; i < h; ++i)
            for (Index j = 0; j < w; ++j) o[i * w + j] = p[(i / 2) * d.width + j / 2];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dense maps between fully connected layers. Weights are (out, in).

/// y = x W^T, with x flattened to (N, in).
template <typename Scalar>
BasicTensor<Scalar> dense(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& w) {
    if (w.rank() != 2) throw ShapeError("dense: weight must be a matrix");
    const Index n = x.dim(0), in = w.dim(1);
    if (x.size() != n * in)
        throw ShapeError("dense: input " + to_string(x.shape()) + " does not match weight " +
                         to_string(w.shape()));
    BasicTensor<Scalar> out({n, w.dim(0)});
    out.matrix(n).noalias() = x.matrix(n) * w.matrix(w.dim(0)).transpose();
    return out;
}

/// y = x W, the reverse direction of `dense`, reshaped to `out_shape`.
template <typename Scalar>
BasicTensor<Scalar> dense_transposed(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& w,
                                     Shape out_shape) {
    if (w.rank() != 2) throw ShapeError("dense_transposed: weight must be a matrix");
    const Index n = x.dim(0);
    if (x.size() != n * w.dim(0) || shape_size(out_shape) != n * w.dim(1))
        throw ShapeError("dense_transposed: shapes do not match weight " + to_string(w.shape()));
    BasicTensor<Scalar> out(std::move(out_shape));
    out.matrix(n).noalias() = x.matrix(n) * w.matrix(w.dim(0));
    return out;
}

/// Axis holding per-unit / per-channel biases for a layer tensor.
inline Index bias_axis(Index rank) { return rank == 3 ? 0 : (rank == 1 ? 0 : 1); }

/// Adds a per-channel (conv) or per-unit (fc) bias, broadcasting over batch and space.
template <typename Scalar>
BasicTensor<Scalar> add_bias(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& b) {
    const Index axis = bias_axis(x.rank());
    const Index c = x.dim(axis);
    if (b.size() != c)
        throw ShapeError("add_bias: bias of size " + std::to_string(b.size()) + " for " +
                         std::to_string(c) + " channels");
    Index outer = 1, inner = 1;
    for (Index i = 0; i < axis; ++i) outer *= x.dim(i);
    for (Index i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    BasicTensor<Scalar> out = x;
    Scalar* p = out.data();
    for (Index o = 0; o < outer; ++o)
        for (Index ch = 0; ch < c; ++ch, p += inner)
            Eigen::Map<typename BasicTensor<Scalar>::Vector>(p, inner).array() += b[ch];
    return out;
}

/// Sum over everything except the bias axis; the adjoint of `add_bias` for the bias.
template <typename Scalar>
BasicTensor<Scalar> reduce_to_bias(const BasicTensor<Scalar>& g, const Shape& bias_shape) {
    const Index axis = bias_axis(g.rank());
    const Index c = g.dim(axis);
    Index outer = 1, inner = 1;
    for (Index i = 0; i < axis; ++i) outer *= g.dim(i);
    for (Index i = axis + 1; i < g.rank(); ++i) inner *= g.dim(i);
    BasicTensor<Scalar> out(bias_shape);
    const Scalar* p = g.data();
    for (Index o = 0; o < outer; ++o)
        for (Index ch = 0; ch < c; ++ch, p += inner)
            out[ch] += Eigen::Map<const typename BasicTensor<Scalar>::Vector>(p, inner).sum();
    return out;
}

/// On observed (nonzero mask) positions: mix * values + (1 - mix) * x; elsewhere x.
inline BasicTensor<double> blend(const BasicTensor<double>& x, const BasicTensor<double>& values,
                                 const Mask& mask, double mix) {
    require_same_shape(x.shape(), values.shape(), "blend");
    require_same_shape(x.shape(), mask.shape(), "blend mask");
    BasicTensor<double> out = x;
    for (Index i = 0; i < x.size(); ++i)
        if (mask[i]) out[i] = mix * values[i] + (1.0 - mix) * x[i];
    return out;
}

inline BasicTensor<double> sum(const BasicTensor<double>& x) {
    return BasicTensor<double>::scalar(x.vec().sum());
}

/// Per-item sums along the leading (batch) axis.
inline BasicTensor<double> sum_items(const BasicTensor<double>& x) {
    const Index n = x.dim(0);
    return BasicTensor<double>({n}, x.matrix(n).rowwise().sum());
}

inline BasicTensor<double> clip(const BasicTensor<double>& x, double lo, double hi) {
    return BasicTensor<double>(x.shape(), x.vec().cwiseMax(lo).cwiseMin(hi));
}

/// log(1 + exp(x)) elementwise, returning x directly once x > 30.
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline BasicTensor<double> softplus(const BasicTensor<double>& x) {
    BasicTensor<double> out(x.shape());
    for (Index i = 0; i < x.size(); ++i) out[i] = softplus(x[i]);
    return out;
}

}  // namespace cban
