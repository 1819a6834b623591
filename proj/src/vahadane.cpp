#include "stainnorm/vahadane.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>

#include "label_errors.hpp"
#include "stainnorm/macenko.hpp"

namespace stainnorm {

namespace {

Eigen::Matrix2Xd solve_densities(const Eigen::Matrix3Xd& od, const StainMatrix& stains, double lambda) {
    const TwoStainSolver<double> solver(stains, lambda);
    Eigen::Matrix2Xd s(2, od.cols());
    for (Eigen::Index k = 0; k < od.cols(); ++k) {
        s.col(k) = solver.solve(od.col(k));
    }
    return s;
}

// Unconstrained-scale V minimising ||od - V S||^2 row by row, or nothing if S is rank deficient.
std::optional<StainMatrix> solve_stains(const Eigen::Matrix3Xd& od, const Eigen::Matrix2Xd& densities) {
    const Eigen::Matrix2d gram = densities * densities.transpose();
    if (!(gram.determinant() > 1e-12 * gram(0, 0) * gram(1, 1))) {
        return std::nullopt;
    }
    const Eigen::Matrix2d inverse = gram.inverse();
    const Eigen::Matrix<double, 2, 3> cross = densities * od.transpose();
    StainMatrix v;
    for (int r = 0; r < 3; ++r) {
        v.row(r) = minimize_nonneg_quadratic<double>(gram, inverse, cross.col(r)).transpose();
    }
    return v;
}

std::optional<StainMatrix> unit_columns(StainMatrix v) {
    v = v.cwiseMax(0.0);
    for (int c = 0; c < 2; ++c) {
        const double n = v.col(c).norm();
        if (!(n > 0)) {
            return std::nullopt;
        }
        v.col(c) /= n;
    }
    return v;
}

}  // namespace

void SnmfParams::validate() const {
    od.validate();
    if (!(sparsity_lambda >= 0)) {
        throw InvalidArgument("sparsity_lambda must be non-negative");
    }
    if (max_iters < 1) {
        throw InvalidArgument("max_iters must be at least 1");
    }
    if (!(tol > 0)) {
        throw InvalidArgument("tol must be positive");
    }
    if (!(od_threshold > 0)) {
        throw InvalidArgument("od_threshold must be positive");
    }
    if (max_pixels < 2) {
        throw InvalidArgument("max_pixels must be at least 2");
    }
}

double snmf_objective(const Eigen::Matrix3Xd& od, const StainMatrix& stains, const Eigen::Matrix2Xd& densities,
                      double lambda) {
    return (od - stains * densities).squaredNorm() + lambda * densities.sum();
}

SnmfFit factorize_snmf(const Eigen::Matrix3Xd& od, const StainMatrix& initial, const SnmfParams& p) {
    p.validate();
    const double lambda = p.sparsity_lambda;

    SnmfFit fit;
    fit.stains = initial;
    fit.densities = solve_densities(od, fit.stains, lambda);
    double current = snmf_objective(od, fit.stains, fit.densities, lambda);
    fit.objective.push_back(current);

    double last_rel_change = 0;
    for (int iter = 0; iter < p.max_iters; ++iter) {
        const std::optional<StainMatrix> raw = solve_stains(od, fit.densities);
        const std::optional<StainMatrix> target = raw ? unit_columns(*raw) : std::nullopt;

        bool accepted = false;
        if (target) {
            for (double step = 1.0; step >= 1.0 / 1024; step /= 2) {
                const std::optional<StainMatrix> trial = unit_columns(fit.stains + step * (*target - fit.stains));
                if (!trial) {
                    continue;
                }
                Eigen::Matrix2Xd densities;
                try {
                    densities = solve_densities(od, *trial, lambda);
                } catch (const RankDeficient&) {
                    continue;
                }
                const double value = snmf_objective(od, *trial, densities, lambda);
                if (value <= current) {
                    last_rel_change = (current - value) / std::max(current, 1e-300);
                    fit.stains = *trial;
                    fit.densities = std::move(densities);
                    current = value;
                    accepted = true;
                    break;
                }
            }
        }
        if (!accepted) {
            // No descent direction left from this iterate.
            fit.converged = true;
            break;
        }
        fit.objective.push_back(current);
        if (last_rel_change < p.tol) {
            fit.converged = true;
            break;
        }
    }
    if (!fit.converged && last_rel_change > 100 * p.tol) {
        throw NonConvergence("SNMF stopped after " + std::to_string(p.max_iters) +
                             " iterations with relative change " + std::to_string(last_rel_change));
    }
    return fit;
}

SnmfFit fit_snmf(const RgbImage& img, const SnmfParams& p) {
    p.validate();
    Eigen::Matrix3Xd tissue = tissue_densities(rgb_to_od(img, p.od), p.od_threshold);
    if (tissue.cols() < 2) {
        throw NoTissue("fewer than two pixels above the optical-density threshold");
    }
    if (tissue.cols() > p.max_pixels) {
        std::vector<Eigen::Index> all(static_cast<size_t>(tissue.cols()));
        std::iota(all.begin(), all.end(), Eigen::Index{0});
        std::vector<Eigen::Index> chosen;
        chosen.reserve(static_cast<size_t>(p.max_pixels));
        std::mt19937_64 rng(p.seed);
        std::sample(all.begin(), all.end(), std::back_inserter(chosen), p.max_pixels, rng);
        Eigen::Matrix3Xd subset(3, p.max_pixels);
        for (Eigen::Index i = 0; i < p.max_pixels; ++i) {
            subset.col(i) = tissue.col(chosen[static_cast<size_t>(i)]);
        }
        tissue = std::move(subset);
    }

    MacenkoParams warm;
    warm.od_threshold = p.od_threshold;
    warm.od = p.od;
    const StainMatrix initial = estimate_stains_macenko(tissue, warm);

    SnmfFit fit = factorize_snmf(tissue, initial, p);
    // Reordering swaps the density rows too.
    if (fit.stains(2, 1) > fit.stains(2, 0)) {
        fit.stains.col(0).swap(fit.stains.col(1));
        fit.densities.row(0).swap(fit.densities.row(1));
    }
    return fit;
}

StainMatrix estimate_stains_snmf(const RgbImage& img, const SnmfParams& p) { return fit_snmf(img, p).stains; }

RgbImage normalize_vahadane(const RgbImage& source, const RgbImage& target, const SnmfParams& p) {
    const StainMatrix src = detail::labelled("source", [&] { return estimate_stains_snmf(source, p); });
    const StainMatrix tgt = detail::labelled("target", [&] { return estimate_stains_snmf(target, p); });
    return transfer_stains(source, src, target, tgt, p.concentration_percentile, p.od);
}

}  // namespace stainnorm
