#pragma once

// Grayscale frames, affine patch sampling into template space, and the
// COCO-style uncompressed run-length mask codec.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "l1dpf/errors.hpp"
#include "l1dpf/quad.hpp"

namespace l1dpf::imaging {

/// Row-major grayscale image with intensities in [0, 1]. Pixel (x, y) has its
/// center at coordinate (x, y) and covers [x - 0.5, x + 0.5) x [y - 0.5, y + 0.5).
class Frame {
public:
    Frame() = default;

    Frame(int width, int height, double fill = 0.0)
        : width_(width), height_(height) {
        if (width < 1 || height < 1)
            throw FormatError("frame dimensions must be positive, got " +
                              std::to_string(width) + "x" + std::to_string(height));
        pixels_.assign(static_cast<std::size_t>(width) * height, std::clamp(fill, 0.0, 1.0));
    }

    Frame(int width, int height, std::vector<double> pixels)
        : width_(width), height_(height), pixels_(std::move(pixels)) {
        if (width < 1 || height < 1)
            throw FormatError("frame dimensions must be positive");
        if (pixels_.size() != static_cast<std::size_t>(width) * height)
            throw FormatError("pixel count " + std::to_string(pixels_.size()) +
                              " does not match " + std::to_string(width) + "x" +
                              std::to_string(height));
        for (double& v : pixels_) {
            if (!std::isfinite(v)) throw FormatError("non-finite pixel intensity");
            v = std::clamp(v, 0.0, 1.0);
        }
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    bool empty() const noexcept { return pixels_.empty(); }

    double at(int x, int y) const { return pixels_[index(x, y)]; }
    void set(int x, int y, double v) { pixels_[index(x, y)] = std::clamp(v, 0.0, 1.0); }

    /// Reads 0 outside the frame.
    double at_or_zero(int x, int y) const noexcept {
        if (x < 0 || y < 0 || x >= width_ || y >= height_) return 0.0;
        return pixels_[static_cast<std::size_t>(y) * width_ + x];
    }

    double bilinear(double x, double y) const noexcept {
        const double fx = std::floor(x);
        const double fy = std::floor(y);
        const int x0 = static_cast<int>(fx);
        const int y0 = static_cast<int>(fy);
        const double tx = x - fx;
        const double ty = y - fy;
        return (1 - ty) * ((1 - tx) * at_or_zero(x0, y0) + tx * at_or_zero(x0 + 1, y0)) +
               ty * ((1 - tx) * at_or_zero(x0, y0 + 1) + tx * at_or_zero(x0 + 1, y0 + 1));
    }

    std::span<const double> pixels() const noexcept { return pixels_; }

private:
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * width_ + x;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> pixels_;
};

/// A side x side template sample flattened row-major.
struct PatchVector {
    Eigen::VectorXd values;
    int side = 0;
    bool normalized = false;

    Eigen::Index size() const noexcept { return values.size(); }
};

class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height, bool fill = false)
        : width_(width), height_(height),
          bits_(static_cast<std::size_t>(width) * height, fill ? 1 : 0) {
        if (width < 0 || height < 0) throw FormatError("negative mask dimensions");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }

    bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

    std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
    }

    bool operator==(const BinaryMask&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// BT.601 luma of an interleaved 8-bit RGB buffer.
inline Frame to_grayscale(std::span<const std::uint8_t> rgb, int width, int height) {
    if (width < 1 || height < 1)
        throw FormatError("frame dimensions must be positive");
    const std::size_t n = static_cast<std::size_t>(width) * height;
    if (rgb.size() != 3 * n)
        throw FormatError("rgb buffer has " + std::to_string(rgb.size()) + " bytes, expected " +
                          std::to_string(3 * n));
    std::vector<double> px(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = (0.299 * rgb[3 * i] + 0.587 * rgb[3 * i + 1] + 0.114 * rgb[3 * i + 2]) / 255.0;
        px[i] = std::clamp(v, 0.0, 1.0);
    }
    return Frame(width, height, std::move(px));
}

/// Samples a side x side grid of cell centers of the reference square, mapped
/// affinely onto `quad`, with bilinear interpolation. Out-of-frame reads are 0.
inline PatchVector warp_patch(const Frame& frame, const geometry::QuadBB& quad, int side,
                              bool normalize) {
    if (side < 2) throw ContractError("template side must be >= 2");
    if (!geometry::all_finite(quad)) throw DegenerateRegionError("quad has non-finite corners");
    if (geometry::area(quad) < 1.0)
        throw DegenerateRegionError("quad area below one pixel");

    const geometry::AffineMatrix a = geometry::fit_affine_to_quad(quad, side);
    const double a11 = a(0, 0), a12 = a(0, 1), a21 = a(1, 0), a22 = a(1, 1);
    const double tx = a(0, 2), ty = a(1, 2);
    const double start = -0.5 * side + 0.5;

    PatchVector patch;
    patch.side = side;
    patch.values.resize(static_cast<Eigen::Index>(side) * side);
    for (int r = 0; r < side; ++r) {
        const double v = start + r;
        for (int c = 0; c < side; ++c) {
            const double u = start + c;
            patch.values[r * side + c] =
                frame.bilinear(a11 * u + a12 * v + tx, a21 * u + a22 * v + ty);
        }
    }
    if (normalize) {
        const double norm = patch.values.norm();
        if (norm > 0.0) patch.values /= norm;
        patch.normalized = true;
    }
    return patch;
}

/// Decodes COCO uncompressed RLE: alternating 0-/1-runs, column-major, first
/// run counts zeros.
inline BinaryMask rle_decode(std::span<const long long> counts, int h, int w) {
    if (h < 0 || w < 0) throw FormatError("negative mask size");
    long long total = 0;
    for (long long c : counts) {
        if (c < 0) throw FormatError("negative run length");
        total += c;
    }
    if (total != static_cast<long long>(h) * w)
        throw FormatError("run lengths sum to " + std::to_string(total) + ", expected " +
                          std::to_string(static_cast<long long>(h) * w));
    BinaryMask mask(w, h);
    long long pos = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (i % 2 == 1) {
            for (long long k = pos; k < pos + counts[i]; ++k)
                mask.set(static_cast<int>(k / h), static_cast<int>(k % h), true);
        }
        pos += counts[i];
    }
    return mask;
}

inline std::vector<long long> rle_encode(const BinaryMask& mask) {
    std::vector<long long> counts;
    bool current = false;
    long long run = 0;
    for (int x = 0; x < mask.width(); ++x) {
        for (int y = 0; y < mask.height(); ++y) {
            const bool bit = mask.at(x, y);
            if (bit != current) {
                counts.push_back(run);
                run = 0;
                current = bit;
            }
            ++run;
        }
    }
    counts.push_back(run);
    return counts;
}

}  // namespace l1dpf::imaging
