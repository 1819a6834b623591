#include "stainnorm/optical_density.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "stainnorm/stats.hpp"

namespace stainnorm {

void OdConfig::validate() const {
    if (!(i0 > 0) || !(epsilon > 0) || !(epsilon <= i0)) {
        throw InvalidArgument("OdConfig requires i0 > 0 and 0 < epsilon <= i0");
    }
}

OdImage rgb_to_od(const RgbImage& img, const OdConfig& cfg) {
    cfg.validate();
    OdImage od{img.width(), img.height(), {}};
    const Eigen::Array3Xd intensity = img.pixels().transpose().cast<double>().max(cfg.epsilon);
    od.values = (cfg.i0 / intensity).log10().max(0.0).matrix();
    return od;
}

RgbImage od_to_rgb(const OdImage& od, const OdConfig& cfg) {
    cfg.validate();
    RgbImage out(od.width, od.height);
    const double top = std::min(cfg.i0, 255.0);
    for (Eigen::Index k = 0; k < od.values.cols(); ++k) {
        for (int c = 0; c < 3; ++c) {
            const double intensity = cfg.i0 * std::pow(10.0, -od.values(c, k));
            out.pixels()(k, c) = static_cast<std::uint8_t>(std::clamp(std::round(intensity), 0.0, top));
        }
    }
    return out;
}

ConcentrationMap decompose(const OdImage& od, const StainMatrix& stains) {
    const TwoStainSolver<double> solver(stains);
    ConcentrationMap s{od.width, od.height, Eigen::Matrix2Xd(2, od.values.cols())};
    for (Eigen::Index k = 0; k < od.values.cols(); ++k) {
        s.values.col(k) = solver.solve(od.values.col(k));
    }
    return s;
}

RgbImage reconstruct(const ConcentrationMap& s, const StainMatrix& stains, const OdConfig& cfg) {
    if (s.values.cols() != Eigen::Index{s.width} * s.height) {
        throw DimensionMismatch("concentration map holds " + std::to_string(s.values.cols()) +
                                " pixels for a " + std::to_string(s.width) + "x" + std::to_string(s.height) +
                                " image");
    }
    OdImage od{s.width, s.height, stains * s.values};
    return od_to_rgb(od, cfg);
}

RgbImage transfer_stains(const RgbImage& source, const StainMatrix& source_stains, const RgbImage& target,
                         const StainMatrix& target_stains, double percentile_q, const OdConfig& cfg) {
    ConcentrationMap src = decompose(rgb_to_od(source, cfg), source_stains);
    const ConcentrationMap tgt = decompose(rgb_to_od(target, cfg), target_stains);
    for (int stain = 0; stain < 2; ++stain) {
        const Eigen::RowVectorXd src_row = src.values.row(stain);
        const Eigen::RowVectorXd tgt_row = tgt.values.row(stain);
        const double src_max = percentile(std::vector<double>(src_row.begin(), src_row.end()), percentile_q);
        const double tgt_max = percentile(std::vector<double>(tgt_row.begin(), tgt_row.end()), percentile_q);
        if (src_max > 0) {
            src.values.row(stain) *= tgt_max / src_max;
        }
    }
    return reconstruct(src, target_stains, cfg);
}

}  // namespace stainnorm
