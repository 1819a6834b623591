#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>

#include "stainnorm/errors.hpp"

namespace stainnorm {

/// 8-bit RGB raster. Pixels are stored one per row in row-major scan order,
/// so `pixels().row(y * width + x)` is the (R, G, B) triple at (x, y).
class RgbImage {
public:
    using Pixels = Eigen::Array<std::uint8_t, Eigen::Dynamic, 3, Eigen::RowMajor>;

    RgbImage(int width, int height, std::uint8_t fill = 0);
    RgbImage(int width, int height, Pixels pixels);

    [[nodiscard]] int width() const { return width_; }
    [[nodiscard]] int height() const { return height_; }
    [[nodiscard]] Eigen::Index pixel_count() const { return pixels_.rows(); }

    [[nodiscard]] const Pixels& pixels() const { return pixels_; }
    Pixels& pixels() { return pixels_; }

    [[nodiscard]] std::uint8_t at(int x, int y, int channel) const {
        return pixels_(Eigen::Index{y} * width_ + x, channel);
    }
    std::uint8_t& at(int x, int y, int channel) { return pixels_(Eigen::Index{y} * width_ + x, channel); }

    friend bool operator==(const RgbImage& a, const RgbImage& b) {
        return a.width_ == b.width_ && a.height_ == b.height_ && (a.pixels_ == b.pixels_).all();
    }

private:
    int width_;
    int height_;
    Pixels pixels_;
};

/// Row-major scalar plane, `rows() == height`, `cols() == width`.
template <typename Scalar>
using GrayImageT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using GrayImage = GrayImageT<double>;

/// Channels-first float image in the generator's [-1, 1] range; column k is pixel k in
/// row-major scan order.
template <typename Scalar>
struct PlanarImage {
    int width = 0;
    int height = 0;
    Eigen::Array<Scalar, 3, Eigen::Dynamic> data;
};
using ModelImage = PlanarImage<double>;

// ITU-R BT.601 luma weights.
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

GrayImage to_grayscale(const RgbImage& img);

/// Luma of a model-space image after mapping [-1, 1] onto [0, 1].
template <typename Scalar>
GrayImageT<Scalar> to_grayscale(const PlanarImage<Scalar>& img) {
    const auto unit = (img.data + Scalar(1)) / Scalar(2);
    Eigen::Array<Scalar, 1, Eigen::Dynamic> luma =
        Scalar(kLumaR) * unit.row(0) + Scalar(kLumaG) * unit.row(1) + Scalar(kLumaB) * unit.row(2);
    return Eigen::Map<const GrayImageT<Scalar>>(luma.data(), img.height, img.width);
}

template <typename Scalar = double>
PlanarImage<Scalar> to_model(const RgbImage& img) {
    PlanarImage<Scalar> out{img.width(), img.height(), {}};
    out.data = img.pixels().transpose().template cast<Scalar>() / Scalar(127.5) - Scalar(1);
    return out;
}

template <typename Scalar>
RgbImage from_model(const PlanarImage<Scalar>& img) {
    RgbImage out(img.width, img.height);
    for (Eigen::Index k = 0; k < img.data.cols(); ++k) {
        for (int c = 0; c < 3; ++c) {
            const double v = std::round((static_cast<double>(img.data(c, k)) + 1.0) * 127.5);
            out.pixels()(k, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    }
    return out;
}

/// Bilinear resampling with half-pixel centres and edge clamping.
RgbImage resize(const RgbImage& img, int width, int height);

/// PNG decode. Grayscale and palette files are expanded to RGB, alpha is dropped;
/// 16-bit files are rejected.
RgbImage read_image(const std::filesystem::path& path);

/// PNG encode (8-bit RGB, no alpha). Writes to a sibling temporary and renames, so a failed
/// write never leaves a partial file at `path`.
void write_image(const RgbImage& img, const std::filesystem::path& path);

}  // namespace stainnorm
