#include "cban/metrics.hpp"

#include "cban/datasets.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace cban;
using cban::testing::random_tensor;

namespace {

Tensor wave(double noise) {
    Tensor t({16, 20});
    for (Index i = 0; i < 16; ++i)
        for (Index j = 0; j < 20; ++j)
            t(i, j) = std::sin(0.3 * i) * std::cos(0.2 * j) + noise * std::cos(0.7 * i + 0.4 * j);
    return t;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("psnr examples") {
    const Tensor a({4}, {0.1, 0.2, 0.3, 0.4});
    CHECK(psnr(a, a, 1.0) == kInfinitePsnr);
    CHECK(psnr(Tensor({4}), Tensor({4}, 0.1), 1.0) == doctest::Approx(20.0));
    CHECK(psnr(wave(0.0), wave(0.1), 2.0) == doctest::Approx(29.06943276563313).epsilon(1e-12));
    const Tensor b({4}, {0.0, 0.25, 0.3, 0.5});
    CHECK(psnr(3.0 * a, 3.0 * b, 3.0) == doctest::Approx(psnr(a, b, 1.0)).epsilon(1e-12));
    CHECK_THROWS_AS(psnr(a, Tensor({3}), 1.0), ShapeError);
}

TEST_CASE("psnr decreases with noise variance") {
    Rng rng(1);
    const Tensor base = random_tensor({20, 20}, rng);
    const Tensor noise = random_tensor({20, 20}, rng);
    double last = kInfinitePsnr;
    for (double s : {0.01, 0.05, 0.1, 0.5, 1.0}) {
        const double p = psnr(base, base + s * noise, 2.0);
        CHECK(p < last);
        last = p;
    }
}

TEST_CASE("ssim matches the reference implementation") {
    CHECK(ssim(wave(0.0), wave(0.1), 2.0) == doctest::Approx(0.8443427071333173).epsilon(1e-12));
    Tensor checker({16, 20});
    for (Index i = 0; i < 16; ++i)
        for (Index j = 0; j < 20; ++j) checker(i, j) = (i + j) % 2 ? -0.8 : 0.8;
    CHECK(ssim(checker, -1.0 * checker, 2.0) == doctest::Approx(-0.9943907759403018).epsilon(1e-12));
    CHECK(ssim(checker, -1.0 * checker, 2.0) < 0.0);
}

TEST_CASE("ssim identities and bounds") {
    Rng rng(2);
    const Tensor x = random_tensor({3, 14, 12}, rng);
    CHECK(ssim(x, x, 2.0) == 1.0);
    for (int i = 0; i < 30; ++i) {
        const Tensor a = random_tensor({12, 15}, rng), b = random_tensor({12, 15}, rng);
        const double s = ssim(a, b, 2.0);
        CHECK(s == doctest::Approx(ssim(b, a, 2.0)).epsilon(1e-14));
        CHECK(s >= -1.0);
        CHECK(s <= 1.0);
    }
    CHECK_THROWS_AS(ssim(Tensor({10, 20}), Tensor({10, 20}), 1.0), ShapeError);
}

TEST_CASE("completion accuracy") {
    const Tensor targets({2, 3}, {0.999, -0.999, 0.999, -0.999, -0.999, 0.999});
    const Mask mask({2, 3}, {1, 0, 0, 0, 0, 0});
    auto score = completion_accuracy(targets, targets, mask);
    CHECK(score.per_item == 1.0);
    CHECK(score.per_pixel == 1.0);
    Tensor out = targets;
    out[4] = 0.5;  // wrong sign on an unobserved pixel of item 1
    score = completion_accuracy(out, targets, mask);
    CHECK(score.per_item == 0.5);
    CHECK(score.per_pixel == doctest::Approx(4.0 / 5.0));
    out = targets;
    out[0] = -0.9;  // observed pixels are not scored
    out[2] = 0.3;
    CHECK(completion_accuracy(out, targets, mask).per_item == 1.0);
    out[2] = -0.3;
    CHECK(completion_accuracy(out, targets, mask).per_item == 0.5);
}

TEST_CASE("label accuracy") {
    Tensor out({2, kMnistVisible});
    out.set_item(0, mnist_visible(Tensor({28, 28}), 3));
    out.set_item(1, mnist_visible(Tensor({28, 28}), 5));
    CHECK(label_accuracy(out, {3, 5}) == 1.0);
    CHECK(label_accuracy(out, {3, 6}) == 0.5);
}

TEST_CASE("summaries") {
    const MetricSummary s = summarize({1.0, 2.0, 3.0, 4.0});
    CHECK(s.mean == 2.5);
    CHECK(s.standard_error == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
    CHECK(summarize({}).mean == 0.0);
    CHECK(summarize({7.0}).standard_error == 0.0);

    Rng rng(4);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> small, large;
    for (int i = 0; i < 100; ++i) small.push_back(d(rng));
    for (int i = 0; i < 10000; ++i) large.push_back(d(rng));
    const double ratio = summarize(small).standard_error / summarize(large).standard_error;
    CHECK(ratio == doctest::Approx(10.0).epsilon(0.15));
}

}  // TEST_SUITE
