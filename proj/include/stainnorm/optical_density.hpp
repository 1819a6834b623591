#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <limits>

#include "stainnorm/errors.hpp"
#include "stainnorm/imaging.hpp"

namespace stainnorm {

struct OdConfig {
    double i0 = 255.0;     ///< full illumination intensity
    double epsilon = 1.0;  ///< intensity floor, keeps black pixels at finite density

    void validate() const;
};

/// Per-channel optical density, one column per pixel in scan order.
struct OdImage {
    int width = 0;
    int height = 0;
    Eigen::Matrix3Xd values;
};

/// Columns are unit absorption vectors: hematoxylin first, eosin second.
template <typename Scalar>
using StainMatrixT = Eigen::Matrix<Scalar, 3, 2>;
using StainMatrix = StainMatrixT<double>;

/// Two stain densities per pixel, one column per pixel in scan order.
struct ConcentrationMap {
    int width = 0;
    int height = 0;
    Eigen::Matrix2Xd values;
};

OdImage rgb_to_od(const RgbImage& img, const OdConfig& cfg = {});
RgbImage od_to_rgb(const OdImage& od, const OdConfig& cfg = {});

/// Per-pixel non-negative least squares of `od` onto the columns of `stains`.
ConcentrationMap decompose(const OdImage& od, const StainMatrix& stains);

/// Renders `stains * s` back to RGB.
RgbImage reconstruct(const ConcentrationMap& s, const StainMatrix& stains, const OdConfig& cfg = {});

/// Re-renders `source` with the target's stain colours. Source densities are scaled per stain
/// so that their `percentile`-th value matches the target's.
RgbImage transfer_stains(const RgbImage& source, const StainMatrix& source_stains, const RgbImage& target,
                         const StainMatrix& target_stains, double percentile, const OdConfig& cfg = {});

/// Minimiser of s' G s - 2 b' s over s >= 0 for a 2x2 symmetric positive-definite G.
///
/// The problem is a two-variable convex QP, so the optimum is one of four active-set
/// candidates (interior, s1 = 0, s0 = 0, origin). All feasible candidates are scored and the
/// best one returned, which avoids branching on nearly-tied KKT tests.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> minimize_nonneg_quadratic(const Eigen::Matrix<Scalar, 2, 2>& gram,
                                                       const Eigen::Matrix<Scalar, 2, 2>& inverse,
                                                       const Eigen::Matrix<Scalar, 2, 1>& b) {
    using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
    auto cost = [&](const Vec2& s) { return s.dot(gram * s) - 2 * b.dot(s); };
    const std::array<Vec2, 4> candidates{
        inverse * b,
        Vec2(std::max(Scalar(0), b(0) / gram(0, 0)), Scalar(0)),
        Vec2(Scalar(0), std::max(Scalar(0), b(1) / gram(1, 1))),
        Vec2::Zero(),
    };
    Vec2 best = Vec2::Zero();
    Scalar best_cost = 0;
    for (const Vec2& s : candidates) {
        if ((s.array() < 0).any()) {
            continue;
        }
        const Scalar c = cost(s);
        if (c < best_cost) {
            best_cost = c;
            best = s;
        }
    }
    return best;
}

/// Exact minimiser of ||V s - o||^2 + l1 * (s0 + s1) over s >= 0 for a 3x2 V.
template <typename Scalar>
class TwoStainSolver {
public:
    using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
    using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

    explicit TwoStainSolver(const StainMatrixT<Scalar>& stains, Scalar l1 = 0)
        : stains_(stains), gram_(stains.transpose() * stains), l1_(l1) {
        const Scalar det = gram_.determinant();
        if (!(det > Scalar(1e-10) * gram_(0, 0) * gram_(1, 1))) {
            throw RankDeficient("stain matrix columns are linearly dependent");
        }
        inverse_ = gram_.inverse();
    }

    [[nodiscard]] Vec2 solve(const Vec3& od) const {
        const Vec2 b = stains_.transpose() * od - Vec2::Constant(l1_ / 2);
        return minimize_nonneg_quadratic<Scalar>(gram_, inverse_, b);
    }

private:
    StainMatrixT<Scalar> stains_;
    Eigen::Matrix<Scalar, 2, 2> gram_;
    Eigen::Matrix<Scalar, 2, 2> inverse_;
    Scalar l1_;
};

}  // namespace stainnorm
