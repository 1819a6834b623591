#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>

#include "stainnorm/imaging.hpp"

namespace stainnorm {

enum class WindowWeights { uniform, gaussian };

struct SsimParams {
    int window = 11;  ///< odd side length of the sliding window
    WindowWeights weights = WindowWeights::gaussian;
    double sigma = 1.5;  ///< Gaussian window width, ignored for uniform windows
    int stride = 1;
    double c1 = 0.01 * 0.01;  ///< (K1 L)^2 with L = 1
    double c2 = 0.03 * 0.03;  ///< (K2 L)^2 with L = 1

    void validate() const;
};

/// Weighted first and second moments of one pair of corresponding windows.
struct WindowStats {
    double mu_a = 0;
    double mu_b = 0;
    double sigma_a = 0;
    double sigma_b = 0;
    double sigma_ab = 0;
};

struct MetricReport {
    double mean = 0;
    double std = 0;  ///< population standard deviation
    std::size_t n = 0;
};

/// Window weights (window x window, summing to one).
Eigen::ArrayXXd window_kernel(const SsimParams& p);

/// Moments of the window whose top-left corner is (x, y), evaluated directly.
WindowStats window_stats(const GrayImage& a, const GrayImage& b, int x, int y, const SsimParams& p);

/// Similarity of one window pair: luminance term times contrast-structure term.
double ssim_index(const WindowStats& s, double c1, double c2);

/// Mean similarity over every window position lying fully inside both images.
double ssim(const GrayImage& a, const GrayImage& b, const SsimParams& p = {});

template <typename Scalar>
double ssim(const GrayImageT<Scalar>& a, const GrayImageT<Scalar>& b, const SsimParams& p = {}) {
    return ssim(GrayImage(a.template cast<double>()), GrayImage(b.template cast<double>()), p);
}

/// SSIM of the luma planes of two RGB images.
double ssim_rgb(const RgbImage& a, const RgbImage& b, const SsimParams& p = {});

/// Structural dissimilarity (1 - ssim_rgb) / 2.
double dssim(const RgbImage& a, const RgbImage& b, const SsimParams& p = {});

/// Mean and population standard deviation of a sample.
MetricReport summarize(std::span<const double> values);

MetricReport evaluate_dataset(std::span<const std::pair<RgbImage, RgbImage>> pairs, const SsimParams& p = {});

inline constexpr const char* kReportHeader = "method,direction,mean,std,n";
std::string report_row(const std::string& method, const std::string& direction, const MetricReport& r);

}  // namespace stainnorm
