#pragma once

#include "stainnorm/optical_density.hpp"

namespace stainnorm {

struct MacenkoParams {
    double od_threshold = 0.15;  ///< pixels with ||od||_2 below this are background
    double angle_low = 1.0;      ///< robust angle extremes, percent
    double angle_high = 99.0;
    double concentration_percentile = 99.0;
    OdConfig od{};

    void validate() const;
};

/// Optical densities of the pixels whose Euclidean OD norm reaches `threshold`, one per column.
Eigen::Matrix3Xd tissue_densities(const OdImage& od, double threshold);

/// Clamps negatives, normalises columns and puts the column with the larger blue component first.
StainMatrix canonical_stain_order(const StainMatrix& stains);

/// Plane-projection stain estimate on an already-masked OD cloud.
StainMatrix estimate_stains_macenko(const Eigen::Matrix3Xd& tissue, const MacenkoParams& p);

StainMatrix estimate_stains_macenko(const RgbImage& img, const MacenkoParams& p = {});

RgbImage normalize_macenko(const RgbImage& source, const RgbImage& target, const MacenkoParams& p = {});

}  // namespace stainnorm
