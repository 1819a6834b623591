#include <doctest.h>

#include <algorithm>
#include <random>

#include "stainnorm/macenko.hpp"
#include "support/synth.hpp"

using namespace stainnorm;
using testing::alternate_he_stains;
using testing::column_angle;

namespace {

int max_channel_diff(const RgbImage& a, const RgbImage& b) {
    return static_cast<int>((a.pixels().cast<int>() - b.pixels().cast<int>()).abs().maxCoeff());
}

}  // namespace

TEST_CASE("macenko recovers synthesized stain vectors") {
    std::mt19937_64 rng(101);
    for (int t = 0; t < 5; ++t) {
        const StainMatrix v = testing::random_stain_matrix(rng);
        const RgbImage img = testing::render(v, testing::random_densities(80 * 80, rng), 80, 80);
        const StainMatrix got = estimate_stains_macenko(img);
        CHECK(column_angle(got.col(0), v.col(0)) < 0.02);
        CHECK(column_angle(got.col(1), v.col(1)) < 0.02);
    }
}

TEST_CASE("macenko output invariants") {
    std::mt19937_64 rng(5);
    const RgbImage img = testing::render(testing::reference_he_stains(), testing::random_densities(4096, rng), 64, 64);
    const StainMatrix v = estimate_stains_macenko(img);
    CHECK((v.array() >= 0).all());
    CHECK(v.col(0).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(v.col(1).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(v(2, 0) >= v(2, 1));

    SUBCASE("pixel shuffle invariance") {
        RgbImage shuffled = img;
        std::vector<Eigen::Index> order(static_cast<size_t>(img.pixel_count()));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t k = 0; k < order.size(); ++k) {
            shuffled.pixels().row(static_cast<Eigen::Index>(k)) = img.pixels().row(order[k]);
        }
        CHECK((estimate_stains_macenko(shuffled) - v).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("deterministic") { CHECK(estimate_stains_macenko(img) == v); }
}

TEST_CASE("macenko estimation errors") {
    CHECK_THROWS_AS(estimate_stains_macenko(RgbImage(32, 32, 255)), NoTissue);

    std::mt19937_64 rng(9);
    Eigen::Matrix2Xd s = testing::random_densities(64 * 64, rng);
    s.row(1).setZero();
    const RgbImage single = testing::render(testing::reference_he_stains(), s, 64, 64);
    CHECK_THROWS_AS(estimate_stains_macenko(single), DegenerateStains);

    MacenkoParams bad;
    bad.angle_low = 50;
    bad.angle_high = 40;
    CHECK_THROWS_AS(estimate_stains_macenko(single, bad), InvalidArgument);
}

TEST_CASE("normalize_macenko") {
    std::mt19937_64 rng(77);
    const Eigen::Matrix2Xd s = testing::random_densities(96 * 96, rng);
    const RgbImage source = testing::render(testing::reference_he_stains(), s, 96, 96);

    SUBCASE("self normalisation is near identity") {
        CHECK(max_channel_diff(normalize_macenko(source, source), source) <= 2);
    }
    SUBCASE("shared densities map onto the target rendering") {
        const RgbImage target = testing::render(alternate_he_stains(), s, 96, 96);
        const RgbImage out = normalize_macenko(source, target);
        CHECK(out.width() == source.width());
        CHECK(max_channel_diff(out, target) <= 2);
    }
    SUBCASE("errors name the failing image") {
        const RgbImage blank(16, 16, 255);
        try {
            normalize_macenko(source, blank);
            FAIL("expected NoTissue");
        } catch (const NoTissue& e) {
            CHECK(std::string(e.what()).find("target") != std::string::npos);
        }
        try {
            normalize_macenko(blank, source);
            FAIL("expected NoTissue");
        } catch (const NoTissue& e) {
            CHECK(std::string(e.what()).find("source") != std::string::npos);
        }
    }
}
