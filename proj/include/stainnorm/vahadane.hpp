#pragma once

#include <cstdint>
#include <vector>

#include "stainnorm/optical_density.hpp"

namespace stainnorm {

struct SnmfParams {
    double sparsity_lambda = 0.1;
    int max_iters = 200;
    double tol = 1e-6;  ///< relative objective decrease that counts as converged
    std::uint64_t seed = 0;
    double od_threshold = 0.15;
    /// Tissue pixels beyond this count are subsampled (seeded) before factorising.
    Eigen::Index max_pixels = 20000;
    double concentration_percentile = 99.0;
    OdConfig od{};

    void validate() const;
};

struct SnmfFit {
    StainMatrix stains;
    Eigen::Matrix2Xd densities;
    /// Objective after initialisation, then after every completed iteration.
    std::vector<double> objective;
    bool converged = false;
};

/// ||od - V S||_F^2 + lambda * sum(S).
double snmf_objective(const Eigen::Matrix3Xd& od, const StainMatrix& stains, const Eigen::Matrix2Xd& densities,
                      double lambda);

/// Alternating minimisation from `initial`. V rows are solved as exact two-variable NNLS
/// problems and renormalised; S is the exact per-pixel non-negative lasso. A V update that
/// would raise the objective is damped and, failing that, rejected, so the recorded objective
/// never increases.
SnmfFit factorize_snmf(const Eigen::Matrix3Xd& od, const StainMatrix& initial, const SnmfParams& p);

/// Full estimate from an image: tissue mask, seeded subsample, plane-projection warm start, SNMF.
SnmfFit fit_snmf(const RgbImage& img, const SnmfParams& p = {});

StainMatrix estimate_stains_snmf(const RgbImage& img, const SnmfParams& p = {});

RgbImage normalize_vahadane(const RgbImage& source, const RgbImage& target, const SnmfParams& p = {});

}  // namespace stainnorm
