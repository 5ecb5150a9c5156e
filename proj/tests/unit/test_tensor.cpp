#include "cban/tensor.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

using namespace cban;
using cban::testing::random_tensor;

TEST_SUITE("tensor") {

TEST_CASE("construction enforces extents and data length") {
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, Tensor::Vector::Zero(3)), ShapeError);
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t(1, 2) == 6);
    CHECK(t.size() == 6);
    CHECK(t.reshaped({3, 2})(2, 1) == 6);
}

TEST_CASE("conv2d_half zero input and identity kernel") {
    Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k({1, 1, 3, 3});
    Rng rng(3);
    k = random_tensor({1, 1, 3, 3}, rng);
    CHECK(conv2d_half(Tensor({1, 3, 3}), k) == Tensor({1, 3, 3}));
    CHECK(conv2d_half(x, Tensor({1, 1, 1, 1}, {1.0})) == x);
}

TEST_CASE("conv2d_half sliding-window sum with zero padding") {
    Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor ones({1, 1, 3, 3}, 1.0);
    const Tensor y = conv2d_half(x, ones);
    CHECK(y(0, 1, 1) == 45);
    CHECK(y(0, 0, 0) == 12);
    CHECK(y(0, 2, 2) == 28);
}

TEST_CASE("conv2d_half argument errors") {
    Tensor x({2, 4, 4});
    CHECK_THROWS_AS(conv2d_half(x, Tensor({1, 3, 3, 3})), ShapeError);
    CHECK_THROWS_AS(conv2d_half(x, Tensor({1, 2, 2, 2})), ShapeError);
}

TEST_CASE("conv2d_half matches a direct loop with signed kernel offsets") {
    Rng rng(11);
    const Tensor x = random_tensor({2, 3, 5, 4}, rng);
    const Tensor k = random_tensor({4, 3, 3, 5}, rng);
    const Tensor y = conv2d_half(x, k);
    for (Index n = 0; n < 2; ++n)
        for (Index q = 0; q < 4; ++q)
            for (Index i = 0; i < 5; ++i)
                for (Index j = 0; j < 4; ++j) {
                    double s = 0;
                    for (Index r = 0; r < 3; ++r)
                        for (Index a = -1; a <= 1; ++a)
                            for (Index b = -2; b <= 2; ++b) {
                                const Index si = i + a, sj = j + b;
                                if (si < 0 || si >= 5 || sj < 0 || sj >= 4) continue;
                                s += k(q, r, a + 1, b + 2) * x(n, r, si, sj);
                            }
                    CHECK(y(n, q, i, j) == doctest::Approx(s).epsilon(1e-12));
                }
}

TEST_CASE("reverse_kernel examples") {
    CHECK(reverse_kernel(Tensor({1, 1, 1, 1}, {2.5})) == Tensor({1, 1, 1, 1}, {2.5}));
    Tensor corner({1, 1, 3, 3});
    corner(0, 0, 0, 0) = 1.0;
    const Tensor flipped = reverse_kernel(corner);
    CHECK(flipped(0, 0, 2, 2) == 1.0);
    CHECK(flipped.vec().sum() == 1.0);
    const Tensor uv({2, 1, 1, 1}, {3.0, -4.0});
    const Tensor t = reverse_kernel(uv);
    CHECK(t.shape() == Shape{1, 2, 1, 1});
    CHECK(t(0, 0, 0, 0) == 3.0);
    CHECK(t(0, 1, 0, 0) == -4.0);
}

TEST_CASE("reverse_kernel is an exact involution") {
    Rng rng(5);
    for (Index ext : {1, 3, 5}) {
        const Tensor k = random_tensor({3, 2, ext, ext}, rng);
        CHECK(reverse_kernel(reverse_kernel(k)) == k);
    }
}

TEST_CASE("convolution transpose identity") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        for (Index ext : {1, 3, 5}) {
            const Tensor x = random_tensor({2, 6, 7}, rng);
            const Tensor y = random_tensor({3, 6, 7}, rng);
            const Tensor k = random_tensor({3, 2, ext, ext}, rng);
            const double lhs = inner(y, conv2d_half(x, k));
            const double rhs = inner(x, conv2d_half(y, reverse_kernel(k)));
            CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(lhs)));
        }
    }
}

TEST_CASE("avg_pool2 examples and errors") {
    CHECK(avg_pool2(Tensor({1, 2, 2}, {1, 2, 3, 4})) == Tensor({1, 1, 1}, {2.5}));
    CHECK(avg_pool2(Tensor({2, 4, 4}, 0.75)) == Tensor({2, 2, 2}, 0.75));
    CHECK(avg_pool2(Tensor({1, 4, 2})) == Tensor({1, 2, 1}));
    CHECK_THROWS_AS(avg_pool2(Tensor({1, 3, 4})), ShapeError);
}

TEST_CASE("nn_upsample2 examples") {
    CHECK(nn_upsample2(Tensor({1, 1, 1}, {5})) == Tensor({1, 2, 2}, 5.0));
    const Tensor up = nn_upsample2(Tensor({1, 2, 2}, {1, 2, 3, 4}));
    const Tensor expected({1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
    CHECK(up == expected);
    Rng rng(2);
    const Tensor x = random_tensor({2, 3, 3, 5}, rng);
    CHECK(max_abs_diff(avg_pool2(nn_upsample2(x)), x) == 0.0);
}

TEST_CASE("pool/upsample adjoint gap is exactly a factor of four") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        // Dyadic values keep every sum exact.
        Tensor x({2, 4, 6}), y({2, 2, 3});
        std::uniform_int_distribution<int> d(-64, 64);
        for (Index i = 0; i < x.size(); ++i) x[i] = d(rng) / 8.0;
        for (Index i = 0; i < y.size(); ++i) y[i] = d(rng) / 8.0;
        CHECK(inner(y, avg_pool2(x)) == 0.25 * inner(nn_upsample2(y), x));
    }
}

TEST_CASE("dense maps are mutual transposes") {
    Rng rng(8);
    const Tensor w = random_tensor({3, 5}, rng);
    const Tensor x = random_tensor({2, 5}, rng);
    const Tensor y = random_tensor({2, 3}, rng);
    CHECK(inner(y, dense(x, w)) == doctest::Approx(inner(x, dense_transposed(y, w, {2, 5}))));
}

TEST_CASE("add_bias broadcasts per channel and reduce_to_bias is its adjoint") {
    Tensor x({2, 3, 2, 2});
    const Tensor b({3}, {1, 2, 3});
    const Tensor y = add_bias(x, b);
    CHECK(y(1, 2, 1, 0) == 3);
    CHECK(y(0, 0, 0, 1) == 1);
    CHECK(reduce_to_bias(Tensor({2, 3, 2, 2}, 1.0), {3}) == Tensor({3}, 8.0));
    CHECK(add_bias(Tensor({4, 2}), Tensor({2}, {1, -1}))(3, 1) == -1);
}

}  // TEST_SUITE
