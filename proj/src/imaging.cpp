#include "stainnorm/imaging.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace stainnorm {

namespace {

void check_dims(int width, int height) {
    if (width <= 0 || height <= 0) {
        throw InvalidArgument("image dimensions must be positive, got " + std::to_string(width) + "x" +
                              std::to_string(height));
    }
}

}  // namespace

RgbImage::RgbImage(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
    check_dims(width, height);
    pixels_ = Pixels::Constant(Eigen::Index{width} * height, 3, fill);
}

RgbImage::RgbImage(int width, int height, Pixels pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
    check_dims(width, height);
    if (pixels_.rows() != Eigen::Index{width} * height) {
        throw DimensionMismatch("pixel buffer holds " + std::to_string(pixels_.rows()) + " pixels, expected " +
                                std::to_string(Eigen::Index{width} * height));
    }
}

GrayImage to_grayscale(const RgbImage& img) {
    const auto rgb = img.pixels().cast<double>();
    Eigen::ArrayXd luma = (kLumaR * rgb.col(0) + kLumaG * rgb.col(1) + kLumaB * rgb.col(2)) / 255.0;
    // Coefficients sum to 1 but not exactly in binary; keep the [0, 1] guarantee.
    luma = luma.min(1.0);
    return Eigen::Map<const GrayImage>(luma.data(), img.height(), img.width());
}

RgbImage resize(const RgbImage& img, int width, int height) {
    if (width <= 0 || height <= 0) {
        throw InvalidArgument("resize target must be positive, got " + std::to_string(width) + "x" +
                              std::to_string(height));
    }
    if (width == img.width() && height == img.height()) {
        return img;
    }
    const double sx = static_cast<double>(img.width()) / width;
    const double sy = static_cast<double>(img.height()) / height;

    struct Tap {
        int lo, hi;
        double frac;
    };
    auto taps = [](int n_out, int n_in, double scale) {
        std::vector<Tap> t(static_cast<size_t>(n_out));
        for (int i = 0; i < n_out; ++i) {
            double src = (i + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
            const int lo = static_cast<int>(std::floor(src));
            const int hi = std::min(lo + 1, n_in - 1);
            t[static_cast<size_t>(i)] = {lo, hi, src - lo};
        }
        return t;
    };
    const auto tx = taps(width, img.width(), sx);
    const auto ty = taps(height, img.height(), sy);

    RgbImage out(width, height);
    for (int y = 0; y < height; ++y) {
        const Tap& vy = ty[static_cast<size_t>(y)];
        for (int x = 0; x < width; ++x) {
            const Tap& vx = tx[static_cast<size_t>(x)];
            for (int c = 0; c < 3; ++c) {
                const double top = (1.0 - vx.frac) * img.at(vx.lo, vy.lo, c) + vx.frac * img.at(vx.hi, vy.lo, c);
                const double bot = (1.0 - vx.frac) * img.at(vx.lo, vy.hi, c) + vx.frac * img.at(vx.hi, vy.hi, c);
                const double v = (1.0 - vy.frac) * top + vy.frac * bot;
                out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
            }
        }
    }
    return out;
}

RgbImage read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ImageIoError("cannot open image file '" + path.string() + "'");
    }
    const std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()) == 0) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw ImageIoError("malformed raster '" + path.string() + "': " + msg);
    }
    if ((image.format & PNG_FORMAT_FLAG_LINEAR) != 0) {
        png_image_free(&image);
        throw ImageIoError("unsupported bit depth in '" + path.string() + "': only 8-bit PNG is supported");
    }
    image.format = PNG_FORMAT_RGB;
    // libpng composites alpha onto this background when dropping it.
    png_color background{255, 255, 255};
    const auto width = static_cast<int>(image.width);
    const auto height = static_cast<int>(image.height);
    RgbImage::Pixels pixels(Eigen::Index{width} * height, 3);
    if (png_image_finish_read(&image, &background, pixels.data(), 0, nullptr) == 0) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw ImageIoError("malformed raster '" + path.string() + "': " + msg);
    }
    return RgbImage(width, height, std::move(pixels));
}

void write_image(const RgbImage& img, const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = PNG_FORMAT_RGB;

    const std::filesystem::path tmp = path.string() + ".tmp";
    if (png_image_write_to_file(&image, tmp.c_str(), 0, img.pixels().data(), 0, nullptr) == 0) {
        const std::string msg = image.message;
        png_image_free(&image);
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw ImageIoError("cannot write '" + path.string() + "': " + msg);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw ImageIoError("cannot move temporary into '" + path.string() + "'");
    }
}

}  // namespace stainnorm
