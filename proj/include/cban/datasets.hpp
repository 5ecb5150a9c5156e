#pragma once

#include "cban/random.hpp"
#include "cban/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace cban {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Target activations stay strictly inside the tanh range.
inline constexpr double kTargetScale = 0.999;

/// A full visible target and the observed-unit mask (nonzero = observed).
struct Example {
    Tensor target;
    Mask mask;
};

// ---------------------------------------------------------------------------
// Bar task: 5x5 images with two full rows or two full columns on.

inline constexpr Index kBarSide = 5;

/// The 20 bar patterns, shaped (5, 5), with pixels at +-0.999.
std::vector<Tensor> gen_bar_patterns();

/// Number of patterns that agree with `target` on every observed pixel.
int count_consistent(const std::vector<Tensor>& patterns, const Tensor& target, const Mask& mask);

/// Random evidence for `pattern` that admits exactly one completion among
/// `patterns`: the number of observed pixels is uniform in 1..24 and the pixels
/// themselves a uniform subset, redrawn until the completion is unique.
Example gen_bar_evidence(const Tensor& pattern, const std::vector<Tensor>& patterns, Rng& rng);

// ---------------------------------------------------------------------------
// IDX files (big-endian; unsigned-byte payloads only).

struct IdxArray {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Byte to activation: 0 -> -0.999, 255 -> +0.999.
double byte_to_activation(std::uint8_t b);
std::uint8_t activation_to_byte(double v);

/// Images as an (N, rows, cols) tensor of activations.
Tensor load_idx_images(const std::filesystem::path& path);
std::vector<int> load_idx_labels(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Supervised MNIST layout: 28 image rows plus one 28-unit label row.

inline constexpr Index kMnistSide = 28;
inline constexpr Index kLabelUnits = 28;
inline constexpr Index kMnistVisible = kMnistSide * kMnistSide + kLabelUnits;  // 812

/// Pair code: units 2c and 2c+1 at +0.999, all others -0.999.
Tensor encode_label(int label);

/// argmax over c of row[2c] + row[2c+1], ties to the smaller class.
int decode_label(const Tensor& label_row);

/// Flattened (812) visible target for a (28, 28) image and its class.
Tensor mnist_visible(const Tensor& image, int label);

/// Flattened (812) mask: the pixel mask with the whole label row unobserved.
Mask mnist_mask(const Mask& pixel_mask);

/// The label row of a flattened (812) visible vector.
Tensor label_row(const Tensor& visible);

// ---------------------------------------------------------------------------
// Masks. Every generator returns an (h, w) mask with 1 = observed.

/// Single-octave gradient noise on a periodic frequency x frequency lattice,
/// thresholded so exactly round(fraction * h * w) pixels are unobserved.
Mask perlin_mask(Index h, Index w, int frequency, double obscured_fraction, Rng& rng);

/// Uniformly placed squares with side uniform in [side_min, side_max], added
/// until at least `white_fraction` of the white (> 0) pixels are covered.
/// `image` is (h, w) or (c, h, w); a pixel is white if its channel mean is > 0.
Mask square_patch_mask(const Tensor& image, Index side_min, Index side_max, double white_fraction,
                       Rng& rng);

/// Each pixel unobserved independently with probability p.
Mask bernoulli_mask(Index h, Index w, double p, Rng& rng);

/// Fraction of unobserved pixels with at least one unobserved 4-neighbor.
double mask_adjacency(const Mask& mask);

/// Mask kind plus whether the MNIST label row is masked as well.
struct MaskSpec {
    enum class Kind { None, Perlin, SquarePatches, Bernoulli };

    Kind kind = Kind::Perlin;
    int frequency = 7;
    double fraction = 1.0 / 3.0;  // obscured (Perlin), white-pixel target (patches), p (Bernoulli)
    Index side_min = 3;
    Index side_max = 6;
    bool mask_label = false;

    void validate() const;
};

/// Pixel mask for `image` ((h, w) or (c, h, w)); `None` observes every pixel.
Mask make_pixel_mask(const MaskSpec& spec, const Tensor& image, Rng& rng);

/// Broadcasts an (h, w) mask over `channels`.
Mask broadcast_mask(const Mask& pixel_mask, Index channels);

// ---------------------------------------------------------------------------
// Netpbm images: P5 (grey) and P6 (color), 8-bit. Tensors are (c, h, w)
// activations with c = 1 or 3.

Tensor read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Tensor& image);

/// Every .pgm / .ppm file in `dir`, in file-name order; all must share a shape.
std::vector<Tensor> load_image_folder(const std::filesystem::path& dir);

}  // namespace cban
