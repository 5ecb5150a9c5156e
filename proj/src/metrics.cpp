#include "cban/metrics.hpp"

#include "cban/datasets.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>

namespace cban {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    require_same_shape(a.shape(), b.shape(), "psnr");
    if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
    const double mse = (a.vec() - b.vec()).squaredNorm() / static_cast<double>(a.size());
    if (mse == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

Eigen::MatrixXd grey(const Tensor& t) {
    if (t.rank() == 2) return t.matrix(t.dim(0));
    if (t.rank() != 3) throw ShapeError("ssim: expected (h, w) or (c, h, w), got " + to_string(t.shape()));
    const Eigen::RowVectorXd mean = t.matrix(t.dim(0)).colwise().mean();
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        mean.data(), t.dim(1), t.dim(2));
}

// Separable valid-mode Gaussian filtering.
Eigen::MatrixXd filter(const Eigen::MatrixXd& x, const Eigen::VectorXd& g) {
    const Index h = x.rows() - kWindow + 1, w = x.cols() - kWindow + 1;
    Eigen::MatrixXd rows(h, x.cols());
    for (Index i = 0; i < h; ++i) rows.row(i) = g.transpose() * x.middleRows(i, kWindow);
    Eigen::MatrixXd out(h, w);
    for (Index j = 0; j < w; ++j) out.col(j) = rows.middleCols(j, kWindow) * g;
    return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, double peak) {
    require_same_shape(a.shape(), b.shape(), "ssim");
    if (!(peak > 0.0)) throw std::invalid_argument("ssim: peak must be positive");
    const Eigen::MatrixXd x = grey(a), y = grey(b);
    if (x.rows() < kWindow || x.cols() < kWindow) throw ShapeError("ssim: image smaller than the 11x11 window");

    Eigen::VectorXd g(kWindow);
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - (kWindow - 1) / 2.0;
        g(i) = std::exp(-d * d / (2.0 * kSigma * kSigma));
    }
    g /= g.sum();

    const double c1 = std::pow(0.01 * peak, 2), c2 = std::pow(0.03 * peak, 2);
    const Eigen::ArrayXXd mx = filter(x, g), my = filter(y, g);
    const Eigen::ArrayXXd sxx = filter(x.cwiseProduct(x), g).array() - mx * mx;
    const Eigen::ArrayXXd syy = filter(y.cwiseProduct(y), g).array() - my * my;
    const Eigen::ArrayXXd sxy = filter(x.cwiseProduct(y), g).array() - mx * my;
    const Eigen::ArrayXXd map =
        ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    return map.mean();
}

CompletionScore completion_accuracy(const Tensor& outputs, const Tensor& targets, const Mask& mask) {
    require_same_shape(outputs.shape(), targets.shape(), "completion_accuracy");
    require_same_shape(mask.shape(), targets.shape(), "completion_accuracy mask");
    const Index n = targets.dim(0), per = targets.size() / n;
    Index items_right = 0, pixels = 0, pixels_right = 0;
    for (Index i = 0; i < n; ++i) {
        bool all = true;
        for (Index k = i * per; k < (i + 1) * per; ++k) {
            if (mask[k]) continue;
            const bool right = (outputs[k] > 0.0) == (targets[k] > 0.0);
            all = all && right;
            ++pixels;
            pixels_right += right;
        }
        items_right += all;
    }
    return {static_cast<double>(items_right) / static_cast<double>(n),
            pixels ? static_cast<double>(pixels_right) / static_cast<double>(pixels) : 1.0};
}

double label_accuracy(const Tensor& outputs, const std::vector<int>& labels) {
    if (outputs.rank() != 2 || outputs.dim(1) != kMnistVisible ||
        outputs.dim(0) != static_cast<Index>(labels.size()))
        throw ShapeError("label_accuracy: expected (N, 812) outputs with N labels");
    Index right = 0;
    for (Index i = 0; i < outputs.dim(0); ++i)
        right += decode_label(label_row(outputs.item(i))) == labels[static_cast<std::size_t>(i)];
    return static_cast<double>(right) / static_cast<double>(labels.size());
}

MetricSummary summarize(std::vector<double> values) {
    MetricSummary s;
    s.values = std::move(values);
    const auto n = static_cast<double>(s.values.size());
    if (s.values.empty()) return s;
    s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / n;
    if (s.values.size() > 1 && std::isfinite(s.mean)) {
        double ss = 0.0;
        for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
        s.standard_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    return s;
}

}  // namespace cban
