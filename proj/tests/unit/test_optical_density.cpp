#include <doctest.h>

#include <cmath>
#include <random>

#include "stainnorm/optical_density.hpp"
#include "support/oracles.hpp"
#include "support/synth.hpp"

using namespace stainnorm;

namespace {

RgbImage grey_ramp() {
    RgbImage img(256, 1);
    for (int i = 0; i < 256; ++i) {
        img.at(i, 0, 0) = img.at(i, 0, 1) = img.at(i, 0, 2) = static_cast<std::uint8_t>(i);
    }
    return img;
}

}  // namespace

TEST_CASE("rgb_to_od values") {
    const OdImage od = rgb_to_od(grey_ramp());
    CHECK(od.values(0, 255) == 0.0);
    // log10(255 / 1) after clamping zero intensity to the floor.
    CHECK(od.values(1, 0) == doctest::Approx(2.40654018043395).epsilon(1e-12));
    // log10(255 / 26)
    CHECK(od.values(2, 26) == doctest::Approx(0.9915668324631373).epsilon(1e-12));

    SUBCASE("monotone decreasing in intensity") {
        for (int i = 2; i < 256; ++i) {
            CHECK(od.values(0, i) < od.values(0, i - 1));
        }
        CHECK(od.values(0, 1) == od.values(0, 0));  // both at the clamp floor
    }
}

TEST_CASE("od_to_rgb values and inverse") {
    OdImage od{2, 1, Eigen::Matrix3Xd::Zero(3, 2)};
    od.values.col(1).setConstant(1.0);
    const RgbImage rgb = od_to_rgb(od);
    CHECK(rgb.at(0, 0, 0) == 255);
    CHECK(rgb.at(1, 0, 0) == 26);  // 25.5 rounds up

    const RgbImage ramp = grey_ramp();
    const RgbImage back = od_to_rgb(rgb_to_od(ramp));
    for (int i = 1; i < 256; ++i) {
        CHECK(back.at(i, 0, 0) == i);
    }
    CHECK(back.at(0, 0, 0) == 1);  // zero lands on the epsilon floor
}

TEST_CASE("OdConfig validation") {
    CHECK_THROWS_AS(rgb_to_od(grey_ramp(), OdConfig{0.0, 1.0}), InvalidArgument);
    CHECK_THROWS_AS(rgb_to_od(grey_ramp(), OdConfig{255.0, 300.0}), InvalidArgument);
}

TEST_CASE("decompose recovers synthesized densities") {
    std::mt19937_64 rng(7);
    const StainMatrix v = testing::reference_he_stains();
    const Eigen::Matrix2Xd s = testing::random_densities(500, rng);
    const ConcentrationMap got = decompose(OdImage{500, 1, v * s}, v);
    CHECK((got.values - s).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("decompose edge cases") {
    const StainMatrix v = testing::reference_he_stains();
    SUBCASE("zero density") {
        const ConcentrationMap s = decompose(OdImage{3, 1, Eigen::Matrix3Xd::Zero(3, 3)}, v);
        CHECK(s.values.isZero(0));
    }
    SUBCASE("orthogonal to both stains") {
        const Eigen::Vector3d normal = v.col(0).cross(v.col(1)).normalized();
        const ConcentrationMap s = decompose(OdImage{1, 1, normal}, v);
        const Eigen::Vector2d expect = oracle::nnls_projected_gradient(v, normal);
        CHECK((s.values.col(0) - expect).norm() < 1e-9);
        CHECK(s.values.isZero(1e-12));
    }
    SUBCASE("matches projected-gradient NNLS on random directions") {
        std::mt19937_64 rng(19);
        std::normal_distribution<double> n(0.0, 1.0);
        for (int t = 0; t < 200; ++t) {
            const Eigen::Vector3d o(n(rng), n(rng), n(rng));
            const ConcentrationMap s = decompose(OdImage{1, 1, o}, v);
            CHECK((s.values.col(0) - oracle::nnls_projected_gradient(v, o)).norm() < 1e-7);
            CHECK((s.values.array() >= 0).all());
        }
    }
    SUBCASE("rank deficient stain matrix") {
        StainMatrix bad;
        bad.col(0) = v.col(0);
        bad.col(1) = v.col(0);
        CHECK_THROWS_AS(decompose(OdImage{1, 1, Eigen::Vector3d::Ones()}, bad), RankDeficient);
    }
}

TEST_CASE("reconstruct") {
    std::mt19937_64 rng(23);
    const StainMatrix v = testing::reference_he_stains();
    const Eigen::Matrix2Xd s = testing::random_densities(64 * 64, rng);
    const RgbImage img = testing::render(v, s, 64, 64);

    SUBCASE("round trip in the stain plane stays within one level") {
        const RgbImage back = reconstruct(decompose(rgb_to_od(img), v), v);
        const Eigen::ArrayXXi diff = back.pixels().cast<int>() - img.pixels().cast<int>();
        CHECK(diff.abs().maxCoeff() <= 1);
    }
    SUBCASE("zero densities render white") {
        const RgbImage white = reconstruct(ConcentrationMap{4, 2, Eigen::Matrix2Xd::Zero(2, 8)}, v);
        CHECK((white.pixels() == 255).all());
    }
    SUBCASE("swapping stain columns with their densities is a no-op") {
        ConcentrationMap c = decompose(rgb_to_od(img), v);
        const RgbImage a = reconstruct(c, v);
        StainMatrix swapped = v;
        swapped.col(0).swap(swapped.col(1));
        c.values.row(0).swap(c.values.row(1));
        CHECK(reconstruct(c, swapped) == a);
    }
    SUBCASE("decompose-reconstruct is a projection in OD space") {
        // Arbitrary OD, not confined to the stain plane.
        std::uniform_real_distribution<double> u(0.0, 1.5);
        Eigen::Matrix3Xd od(3, 400);
        for (Eigen::Index k = 0; k < od.cols(); ++k) {
            od.col(k) << u(rng), u(rng), u(rng);
        }
        const Eigen::Matrix3Xd once = v * decompose(OdImage{20, 20, od}, v).values;
        const Eigen::Matrix3Xd twice = v * decompose(OdImage{20, 20, once}, v).values;
        CHECK((once - twice).cwiseAbs().maxCoeff() < 1e-6);
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(reconstruct(ConcentrationMap{4, 4, Eigen::Matrix2Xd::Zero(2, 3)}, v), DimensionMismatch);
    }
}
