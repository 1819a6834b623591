#include "stainnorm/macenko.hpp"

#include <cmath>
#include <vector>

#include "label_errors.hpp"
#include "stainnorm/stats.hpp"

namespace stainnorm {

namespace {

// Second singular value of the tissue cloud relative to the first, below which the cloud is
// treated as a single direction. 8-bit quantisation of a one-stain image stays well under it.
constexpr double kMinPlaneSpread = 0.02;

}  // namespace

void MacenkoParams::validate() const {
    od.validate();
    if (!(od_threshold > 0)) {
        throw InvalidArgument("od_threshold must be positive");
    }
    if (!(0 < angle_low && angle_low < angle_high && angle_high < 100)) {
        throw InvalidArgument("angle percentiles must satisfy 0 < low < high < 100");
    }
    if (!(0 < concentration_percentile && concentration_percentile <= 100)) {
        throw InvalidArgument("concentration_percentile must lie in (0, 100]");
    }
}

Eigen::Matrix3Xd tissue_densities(const OdImage& od, double threshold) {
    std::vector<Eigen::Index> keep;
    keep.reserve(static_cast<size_t>(od.values.cols()));
    for (Eigen::Index k = 0; k < od.values.cols(); ++k) {
        if (od.values.col(k).norm() >= threshold) {
            keep.push_back(k);
        }
    }
    Eigen::Matrix3Xd tissue(3, static_cast<Eigen::Index>(keep.size()));
    for (size_t i = 0; i < keep.size(); ++i) {
        tissue.col(static_cast<Eigen::Index>(i)) = od.values.col(keep[i]);
    }
    return tissue;
}

StainMatrix canonical_stain_order(const StainMatrix& stains) {
    StainMatrix v = stains.cwiseMax(0.0);
    for (int c = 0; c < 2; ++c) {
        const double n = v.col(c).norm();
        if (!(n > 0)) {
            throw DegenerateStains("stain vector has no positive component");
        }
        v.col(c) /= n;
    }
    if (v(2, 1) > v(2, 0)) {
        v.col(0).swap(v.col(1));
    }
    return v;
}

StainMatrix estimate_stains_macenko(const Eigen::Matrix3Xd& tissue, const MacenkoParams& p) {
    p.validate();
    if (tissue.cols() < 2) {
        throw NoTissue("fewer than two pixels above the optical-density threshold");
    }
    // Right singular vectors of the N x 3 OD matrix are the eigenvectors of its scatter.
    const Eigen::Matrix3d scatter = tissue * tissue.transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
    const Eigen::Vector3d lambda = eig.eigenvalues().cwiseMax(0.0);
    const double s1 = std::sqrt(lambda(2));
    const double s2 = std::sqrt(lambda(1));
    if (!(s1 > 0) || s2 < kMinPlaneSpread * s1) {
        throw DegenerateStains("optical densities span a single direction");
    }
    Eigen::Vector3d e1 = eig.eigenvectors().col(2);
    Eigen::Vector3d e2 = eig.eigenvectors().col(1);
    if (e1.sum() < 0) {
        e1 = -e1;
    }
    if (e2.sum() < 0) {
        e2 = -e2;
    }

    std::vector<double> angles(static_cast<size_t>(tissue.cols()));
    for (Eigen::Index k = 0; k < tissue.cols(); ++k) {
        const auto t = tissue.col(k);
        angles[static_cast<size_t>(k)] = std::atan2(e2.dot(t), e1.dot(t));
    }
    const double lo = percentile(angles, p.angle_low);
    const double hi = percentile(angles, p.angle_high);

    StainMatrix v;
    v.col(0) = std::cos(lo) * e1 + std::sin(lo) * e2;
    v.col(1) = std::cos(hi) * e1 + std::sin(hi) * e2;
    return canonical_stain_order(v);
}

StainMatrix estimate_stains_macenko(const RgbImage& img, const MacenkoParams& p) {
    p.validate();
    return estimate_stains_macenko(tissue_densities(rgb_to_od(img, p.od), p.od_threshold), p);
}

RgbImage normalize_macenko(const RgbImage& source, const RgbImage& target, const MacenkoParams& p) {
    const StainMatrix src = detail::labelled("source", [&] { return estimate_stains_macenko(source, p); });
    const StainMatrix tgt = detail::labelled("target", [&] { return estimate_stains_macenko(target, p); });
    return transfer_stains(source, src, target, tgt, p.concentration_percentile, p.od);
}

}  // namespace stainnorm
