#include "stainnorm/ssim.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <vector>

#include "stainnorm/stats.hpp"

namespace stainnorm {

namespace {

Eigen::ArrayXd window_profile(const SsimParams& p) {
    Eigen::ArrayXd w(p.window);
    const double centre = (p.window - 1) / 2.0;
    for (int i = 0; i < p.window; ++i) {
        w(i) = p.weights == WindowWeights::uniform ? 1.0
                                                   : std::exp(-(i - centre) * (i - centre) / (2 * p.sigma * p.sigma));
    }
    return w / w.sum();
}

void check_pair(const GrayImage& a, const GrayImage& b, const SsimParams& p) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionMismatch("ssim inputs differ in size: " + std::to_string(a.cols()) + "x" +
                                std::to_string(a.rows()) + " vs " + std::to_string(b.cols()) + "x" +
                                std::to_string(b.rows()));
    }
    if (a.rows() < p.window || a.cols() < p.window) {
        throw InvalidArgument("image " + std::to_string(a.cols()) + "x" + std::to_string(a.rows()) +
                              " is smaller than the " + std::to_string(p.window) + "-pixel window");
    }
}

// Separable weighted filter, valid region only.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& img, const Eigen::ArrayXd& w) {
    const Eigen::Index n = w.size();
    const Eigen::Index rows = img.rows() - n + 1;
    const Eigen::Index cols = img.cols() - n + 1;
    Eigen::ArrayXXd horizontal = Eigen::ArrayXXd::Zero(img.rows(), cols);
    for (Eigen::Index k = 0; k < n; ++k) {
        horizontal += w(k) * img.middleCols(k, cols);
    }
    Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(rows, cols);
    for (Eigen::Index k = 0; k < n; ++k) {
        out += w(k) * horizontal.middleRows(k, rows);
    }
    return out;
}

}  // namespace

void SsimParams::validate() const {
    if (window < 3 || window % 2 == 0) {
        throw InvalidArgument("SSIM window must be odd and at least 3");
    }
    if (stride < 1) {
        throw InvalidArgument("SSIM stride must be at least 1");
    }
    if (!(c1 > 0) || !(c2 > 0)) {
        throw InvalidArgument("SSIM stabilisers must be positive");
    }
    if (weights == WindowWeights::gaussian && !(sigma > 0)) {
        throw InvalidArgument("Gaussian window sigma must be positive");
    }
}

Eigen::ArrayXXd window_kernel(const SsimParams& p) {
    p.validate();
    const Eigen::ArrayXd w = window_profile(p);
    return (w.matrix() * w.matrix().transpose()).array();
}

WindowStats window_stats(const GrayImage& a, const GrayImage& b, int x, int y, const SsimParams& p) {
    check_pair(a, b, p);
    const Eigen::ArrayXXd w = window_kernel(p);
    const auto wa = a.block(y, x, p.window, p.window);
    const auto wb = b.block(y, x, p.window, p.window);
    WindowStats s;
    s.mu_a = (w * wa).sum();
    s.mu_b = (w * wb).sum();
    const double var_a = (w * (wa - s.mu_a).square()).sum();
    const double var_b = (w * (wb - s.mu_b).square()).sum();
    s.sigma_a = std::sqrt(std::max(0.0, var_a));
    s.sigma_b = std::sqrt(std::max(0.0, var_b));
    s.sigma_ab = (w * (wa - s.mu_a) * (wb - s.mu_b)).sum();
    return s;
}

double ssim_index(const WindowStats& s, double c1, double c2) {
    const double luminance = (2 * s.mu_a * s.mu_b + c1) / (s.mu_a * s.mu_a + s.mu_b * s.mu_b + c1);
    const double structure =
        (2 * s.sigma_ab + c2) / (s.sigma_a * s.sigma_a + s.sigma_b * s.sigma_b + c2);
    return luminance * structure;
}

double ssim(const GrayImage& a, const GrayImage& b, const SsimParams& p) {
    p.validate();
    check_pair(a, b, p);
    const Eigen::ArrayXd w = window_profile(p);
    const Eigen::ArrayXXd da = a;
    const Eigen::ArrayXXd db = b;
    const Eigen::ArrayXXd mu_a = filter_valid(da, w);
    const Eigen::ArrayXXd mu_b = filter_valid(db, w);
    const Eigen::ArrayXXd e_aa = filter_valid(da * da, w);
    const Eigen::ArrayXXd e_bb = filter_valid(db * db, w);
    const Eigen::ArrayXXd e_ab = filter_valid(da * db, w);

    std::vector<double> values;
    values.reserve(static_cast<size_t>(mu_a.size()));
    for (Eigen::Index y = 0; y < mu_a.rows(); y += p.stride) {
        for (Eigen::Index x = 0; x < mu_a.cols(); x += p.stride) {
            const double ma = mu_a(y, x);
            const double mb = mu_b(y, x);
            // Unclamped variances keep numerator and denominator bitwise equal when a == b.
            const double var_a = e_aa(y, x) - ma * ma;
            const double var_b = e_bb(y, x) - mb * mb;
            const double cov = e_ab(y, x) - ma * mb;
            const double luminance = (2 * ma * mb + p.c1) / (ma * ma + mb * mb + p.c1);
            const double structure = (2 * cov + p.c2) / (var_a + var_b + p.c2);
            values.push_back(luminance * structure);
        }
    }
    return pairwise_sum<double>(values) / static_cast<double>(values.size());
}

double ssim_rgb(const RgbImage& a, const RgbImage& b, const SsimParams& p) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw DimensionMismatch("ssim_rgb inputs differ in size");
    }
    return ssim(to_grayscale(a), to_grayscale(b), p);
}

double dssim(const RgbImage& a, const RgbImage& b, const SsimParams& p) { return (1.0 - ssim_rgb(a, b, p)) / 2.0; }

MetricReport summarize(std::span<const double> values) {
    if (values.empty()) {
        throw InvalidArgument("cannot summarise an empty sample");
    }
    MetricReport r;
    r.n = values.size();
    r.mean = pairwise_sum(values) / static_cast<double>(r.n);
    std::vector<double> sq(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        sq[i] = (values[i] - r.mean) * (values[i] - r.mean);
    }
    r.std = std::sqrt(pairwise_sum<double>(sq) / static_cast<double>(r.n));
    return r;
}

MetricReport evaluate_dataset(std::span<const std::pair<RgbImage, RgbImage>> pairs, const SsimParams& p) {
    if (pairs.empty()) {
        throw InvalidArgument("evaluate_dataset needs at least one image pair");
    }
    std::vector<double> values;
    values.reserve(pairs.size());
    for (const auto& [a, b] : pairs) {
        values.push_back(ssim_rgb(a, b, p));
    }
    return summarize(values);
}

std::string report_row(const std::string& method, const std::string& direction, const MetricReport& r) {
    std::ostringstream os;
    os << method << ',' << direction << ',' << std::fixed << std::setprecision(6) << r.mean << ',' << r.std << ','
       << r.n;
    return os.str();
}

}  // namespace stainnorm
