#pragma once

#include "cban/tensor.hpp"

#include <limits>
#include <vector>

namespace cban {

/// Returned by psnr for identical inputs.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) in decibels.
double psnr(const Tensor& a, const Tensor& b, double peak);

/// Mean SSIM over all valid 11x11 Gaussian (sigma 1.5) windows. Inputs are
/// (h, w) or (c, h, w); color is reduced to the channel mean first.
double ssim(const Tensor& a, const Tensor& b, double peak);

/// Bar-style completion scores over the unobserved pixels of each item,
/// comparing signs. Inputs are batched, (N, ...).
struct CompletionScore {
    double per_item = 0.0;   // every unobserved pixel right
    double per_pixel = 0.0;  // share of unobserved pixels right
};

CompletionScore completion_accuracy(const Tensor& outputs, const Tensor& targets, const Mask& mask);

/// Share of (N, 812) outputs whose decoded label row equals the class.
double label_accuracy(const Tensor& outputs, const std::vector<int>& labels);

/// Per-item values with their mean and standard error (sample std / sqrt n).
struct MetricSummary {
    std::vector<double> values;
    double mean = 0.0;
    double standard_error = 0.0;
};

MetricSummary summarize(std::vector<double> values);

struct MetricReport {
    MetricSummary psnr;
    MetricSummary ssim;
    MetricSummary accuracy;
};

}  // namespace cban
