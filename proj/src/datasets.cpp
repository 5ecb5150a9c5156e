#include "cban/datasets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace cban {

namespace fs = std::filesystem;

std::vector<Tensor> gen_bar_patterns() {
    std::vector<Tensor> out;
    for (bool rows : {true, false})
        for (Index a = 0; a < kBarSide; ++a)
            for (Index b = a + 1; b < kBarSide; ++b) {
                Tensor p({kBarSide, kBarSide}, -kTargetScale);
                for (Index k = 0; k < kBarSide; ++k) {
                    if (rows) {
                        p(a, k) = kTargetScale;
                        p(b, k) = kTargetScale;
                    } else {
                        p(k, a) = kTargetScale;
                        p(k, b) = kTargetScale;
                    }
                }
                out.push_back(std::move(p));
            }
    return out;
}

int count_consistent(const std::vector<Tensor>& patterns, const Tensor& target, const Mask& mask) {
    require_same_shape(target.shape(), mask.shape(), "count_consistent");
    int count = 0;
    for (const Tensor& p : patterns) {
        require_same_shape(p.shape(), target.shape(), "count_consistent");
        bool ok = true;
        for (Index i = 0; i < p.size() && ok; ++i) ok = !mask[i] || (p[i] > 0) == (target[i] > 0);
        count += ok;
    }
    return count;
}

Example gen_bar_evidence(const Tensor& pattern, const std::vector<Tensor>& patterns, Rng& rng) {
    const Index n = pattern.size();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::uniform_int_distribution<Index> observed(1, n - 1);
    for (;;) {
        std::shuffle(order.begin(), order.end(), rng);
        const Index k = observed(rng);
        Mask mask(pattern.shape());
        for (Index i = 0; i < k; ++i) mask[order[static_cast<std::size_t>(i)]] = 1;
        if (count_consistent(patterns, pattern, mask) == 1) return {pattern, std::move(mask)};
    }
}

// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::istream& in, const fs::path& path) {
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw DataError(path.string() + ": truncated header");
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                static_cast<char>(v >> 8), static_cast<char>(v)};
    out.write(b.data(), 4);
}

}  // namespace

IdxArray read_idx(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    const std::uint32_t magic = read_be32(in, path);
    if ((magic >> 16) != 0) throw DataError(path.string() + ": bad IDX magic");
    const unsigned type = (magic >> 8) & 0xff;
    if (type != 0x08) throw DataError(path.string() + ": unsupported IDX element type " + std::to_string(type));
    const unsigned rank = magic & 0xff;
    if (rank == 0) throw DataError(path.string() + ": IDX file with no dimensions");
    IdxArray a;
    std::size_t count = 1;
    for (unsigned d = 0; d < rank; ++d) {
        a.dims.push_back(read_be32(in, path));
        count *= a.dims.back();
    }
    a.data.resize(count);
    if (!in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(count)))
        throw DataError(path.string() + ": truncated IDX payload");
    return a;
}

void write_idx(const fs::path& path, const IdxArray& a) {
    std::size_t count = 1;
    for (auto d : a.dims) count *= d;
    if (a.dims.empty() || a.dims.size() > 255 || count != a.data.size())
        throw DataError("write_idx: dims do not match the payload");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_be32(out, 0x0800u | static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) write_be32(out, d);
    out.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

double byte_to_activation(std::uint8_t b) { return kTargetScale * (b / 127.5 - 1.0); }

std::uint8_t activation_to_byte(double v) {
    const double scaled = std::round((v / kTargetScale + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

Tensor load_idx_images(const fs::path& path) {
    const IdxArray a = read_idx(path);
    if (a.dims.size() != 3) throw DataError(path.string() + ": expected a 3-dimensional image file");
    Tensor t({a.dims[0], a.dims[1], a.dims[2]});
    for (Index i = 0; i < t.size(); ++i) t[i] = byte_to_activation(a.data[static_cast<std::size_t>(i)]);
    return t;
}

std::vector<int> load_idx_labels(const fs::path& path) {
    const IdxArray a = read_idx(path);
    if (a.dims.size() != 1) throw DataError(path.string() + ": expected a 1-dimensional label file");
    return {a.data.begin(), a.data.end()};
}

// ---------------------------------------------------------------------------

Tensor encode_label(int label) {
    if (label < 0 || label > 9) throw std::out_of_range("encode_label: class " + std::to_string(label));
    Tensor row({kLabelUnits}, -kTargetScale);
    row[2 * label] = kTargetScale;
    row[2 * label + 1] = kTargetScale;
    return row;
}

int decode_label(const Tensor& row) {
    if (row.size() < 20) throw ShapeError("decode_label: need at least 20 units");
    int best = 0;
    double best_score = row[0] + row[1];
    for (int c = 1; c < 10; ++c) {
        const double s = row[2 * c] + row[2 * c + 1];
        if (s > best_score) {
            best = c;
            best_score = s;
        }
    }
    return best;
}

Tensor mnist_visible(const Tensor& image, int label) {
    require_same_shape(image.shape(), {kMnistSide, kMnistSide}, "mnist_visible");
    Tensor v({kMnistVisible});
    v.vec().head(kMnistSide * kMnistSide) = image.vec();
    v.vec().tail(kLabelUnits) = encode_label(label).vec();
    return v;
}

Mask mnist_mask(const Mask& pixel_mask) {
    require_same_shape(pixel_mask.shape(), {kMnistSide, kMnistSide}, "mnist_mask");
    Mask m({kMnistVisible});
    m.vec().head(kMnistSide * kMnistSide) = pixel_mask.vec();
    return m;
}

Tensor label_row(const Tensor& visible) {
    if (visible.size() != kMnistVisible) throw ShapeError("label_row: expected 812 visible units");
    return Tensor({kLabelUnits}, Tensor::Vector(visible.vec().tail(kLabelUnits)));
}

// ---------------------------------------------------------------------------

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

Mask observed_except_lowest(const Tensor& field, Index obscured) {
    std::vector<Index> order(static_cast<std::size_t>(field.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return field[a] < field[b]; });
    Mask m(field.shape(), 1);
    for (Index i = 0; i < obscured; ++i) m[order[static_cast<std::size_t>(i)]] = 0;
    return m;
}

void check_fraction(double f, const char* what) {
    if (!(f > 0.0 && f < 1.0)) throw std::invalid_argument(std::string(what) + ": fraction must lie in (0,1)");
}

}  // namespace

Mask perlin_mask(Index h, Index w, int frequency, double obscured_fraction, Rng& rng) {
    if (frequency < 1) throw std::invalid_argument("perlin_mask: frequency must be >= 1");
    check_fraction(obscured_fraction, "perlin_mask");
    const auto f = static_cast<std::size_t>(frequency);
    std::vector<double> gx(f * f), gy(f * f);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    for (std::size_t k = 0; k < f * f; ++k) {
        const double a = angle(rng);
        gx[k] = std::cos(a);
        gy[k] = std::sin(a);
    }
    auto corner = [&](std::size_t cy, std::size_t cx, double dy, double dx) {
        const std::size_t k = (cy % f) * f + (cx % f);
        return gx[k] * dx + gy[k] * dy;
    };
    Tensor field({h, w});
    for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) {
            const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(h) * frequency;
            const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(w) * frequency;
            const auto cy = static_cast<std::size_t>(y), cx = static_cast<std::size_t>(x);
            const double fy = y - static_cast<double>(cy), fx = x - static_cast<double>(cx);
            const double top = std::lerp(corner(cy, cx, fy, fx), corner(cy, cx + 1, fy, fx - 1), smoothstep(fx));
            const double bottom =
                std::lerp(corner(cy + 1, cx, fy - 1, fx), corner(cy + 1, cx + 1, fy - 1, fx - 1), smoothstep(fx));
            field(i, j) = std::lerp(top, bottom, smoothstep(fy));
        }
    const auto obscured = static_cast<Index>(std::llround(obscured_fraction * static_cast<double>(h * w)));
    return observed_except_lowest(field, obscured);
}

namespace {

Tensor luminance(const Tensor& image) {
    if (image.rank() == 2) return image;
    if (image.rank() != 3) throw ShapeError("expected an (h, w) or (c, h, w) image, got " + to_string(image.shape()));
    Tensor out({image.dim(1), image.dim(2)});
    out.vec() = image.matrix(image.dim(0)).colwise().mean().transpose();
    return out;
}

}  // namespace

Mask square_patch_mask(const Tensor& image, Index side_min, Index side_max, double white_fraction, Rng& rng) {
    if (side_min < 1 || side_min > side_max) throw std::invalid_argument("square_patch_mask: bad side range");
    check_fraction(white_fraction, "square_patch_mask");
    const Tensor lum = luminance(image);
    const Index h = lum.dim(0), w = lum.dim(1);
    if (side_max > std::min(h, w)) throw std::invalid_argument("square_patch_mask: patch larger than image");
    Index white = 0;
    for (Index i = 0; i < lum.size(); ++i) white += lum[i] > 0.0;
    if (white == 0) throw DataError("square_patch_mask: image has no white pixels");

    Mask m({h, w}, 1);
    Index covered = 0;
    std::uniform_int_distribution<Index> side_d(side_min, side_max);
    while (static_cast<double>(covered) < white_fraction * static_cast<double>(white)) {
        const Index s = side_d(rng);
        const Index top = std::uniform_int_distribution<Index>(0, h - s)(rng);
        const Index left = std::uniform_int_distribution<Index>(0, w - s)(rng);
        for (Index i = top; i < top + s; ++i)
            for (Index j = left; j < left + s; ++j)
                if (m(i, j)) {
                    m(i, j) = 0;
                    covered += lum(i, j) > 0.0;
                }
    }
    return m;
}

Mask bernoulli_mask(Index h, Index w, double p, Rng& rng) {
    check_fraction(p, "bernoulli_mask");
    Mask m({h, w});
    std::bernoulli_distribution hidden(p);
    for (Index i = 0; i < m.size(); ++i) m[i] = hidden(rng) ? 0 : 1;
    return m;
}

double mask_adjacency(const Mask& m) {
    if (m.rank() != 2) throw ShapeError("mask_adjacency: expected an (h, w) mask");
    const Index h = m.dim(0), w = m.dim(1);
    Index hidden = 0, linked = 0;
    for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) {
            if (m(i, j)) continue;
            ++hidden;
            const bool any = (i > 0 && !m(i - 1, j)) || (i + 1 < h && !m(i + 1, j)) ||
                             (j > 0 && !m(i, j - 1)) || (j + 1 < w && !m(i, j + 1));
            linked += any;
        }
    return hidden ? static_cast<double>(linked) / static_cast<double>(hidden) : 0.0;
}

void MaskSpec::validate() const {
    switch (kind) {
        case Kind::None:
            break;
        case Kind::Perlin:
            if (frequency < 1) throw std::invalid_argument("mask: frequency must be >= 1");
            check_fraction(fraction, "mask");
            break;
        case Kind::SquarePatches:
            if (side_min < 1 || side_min > side_max) throw std::invalid_argument("mask: bad side range");
            check_fraction(fraction, "mask");
            break;
        case Kind::Bernoulli:
            check_fraction(fraction, "mask");
            break;
    }
}

Mask make_pixel_mask(const MaskSpec& spec, const Tensor& image, Rng& rng) {
    const Index h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
    switch (spec.kind) {
        case MaskSpec::Kind::None:
            return Mask({h, w}, 1);
        case MaskSpec::Kind::Perlin:
            return perlin_mask(h, w, spec.frequency, spec.fraction, rng);
        case MaskSpec::Kind::SquarePatches:
            return square_patch_mask(image, spec.side_min, spec.side_max, spec.fraction, rng);
        case MaskSpec::Kind::Bernoulli:
            return bernoulli_mask(h, w, spec.fraction, rng);
    }
    throw std::logic_error("make_pixel_mask: unknown kind");
}

Mask broadcast_mask(const Mask& pixel_mask, Index channels) {
    if (pixel_mask.rank() != 2) throw ShapeError("broadcast_mask: expected an (h, w) mask");
    Mask m({channels, pixel_mask.dim(0), pixel_mask.dim(1)});
    for (Index c = 0; c < channels; ++c) m.set_item(c, pixel_mask);
    return m;
}

// ---------------------------------------------------------------------------

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream& in, const fs::path& path) {
    std::string tok;
    for (int c = in.get(); c != EOF; c = in.get()) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw DataError(path.string() + ": truncated image header");
    return tok;
}

Index pnm_number(std::istream& in, const fs::path& path) {
    const std::string tok = pnm_token(in, path);
    try {
        std::size_t used = 0;
        const long v = std::stol(tok, &used);
        if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DataError(path.string() + ": bad image header field '" + tok + "'");
    }
}

}  // namespace

Tensor read_pnm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    const std::string magic = pnm_token(in, path);
    Index channels = 0;
    if (magic == "P5") channels = 1;
    else if (magic == "P6") channels = 3;
    else throw DataError(path.string() + ": not a binary PGM/PPM file");
    const Index w = pnm_number(in, path), h = pnm_number(in, path), maxval = pnm_number(in, path);
    if (maxval != 255) throw DataError(path.string() + ": only 8-bit images are supported");
    std::vector<unsigned char> raw(static_cast<std::size_t>(channels * h * w));
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw DataError(path.string() + ": truncated pixel data");
    Tensor t({channels, h, w});
    for (Index c = 0; c < channels; ++c)
        for (Index i = 0; i < h * w; ++i)
            t[c * h * w + i] = byte_to_activation(raw[static_cast<std::size_t>(i * channels + c)]);
    return t;
}

void write_pnm(const fs::path& path, const Tensor& image) {
    if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
        throw ShapeError("write_pnm: expected (1|3, h, w), got " + to_string(image.shape()));
    const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(c * h * w));
    for (Index k = 0; k < c; ++k)
        for (Index i = 0; i < h * w; ++i)
            raw[static_cast<std::size_t>(i * c + k)] = activation_to_byte(image[k * h * w + i]);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

std::vector<Tensor> load_image_folder(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto ext = e.path().extension();
        if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .pgm or .ppm images in " + dir.string());
    std::vector<Tensor> out;
    for (const auto& f : files) {
        out.push_back(read_pnm(f));
        if (out.back().shape() != out.front().shape())
            throw DataError(f.string() + ": shape " + to_string(out.back().shape()) + " differs from " +
                            to_string(out.front().shape()));
    }
    return out;
}

}  // namespace cban
