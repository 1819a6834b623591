#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "stainnorm/attention.hpp"
#include "support/oracles.hpp"

using namespace stainnorm;
using Mat = Eigen::MatrixXd;

namespace {

Mat random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) {
        m(k) = n(rng);
    }
    return m;
}

AttentionParams<double> random_params(Eigen::Index c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> mu(-1.0, 1.0);
    return {random_matrix(c / 8, c, rng, 0.5), random_matrix(c / 8, c, rng, 0.5), random_matrix(c, c, rng, 0.5),
            mu(rng)};
}

}  // namespace

TEST_CASE("attention matches the dense oracle") {
    std::mt19937_64 rng(10);
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
        const Eigen::Index c = (t % 2) ? 16 : 8;
        const Eigen::Index n = 1 + t % 16;
        const auto p = random_params(c, rng);
        const Mat x = random_matrix(c, n, rng);
        const Mat expect = oracle::dense_attention(x, p.w_q, p.w_k, p.w_v, p.mu);
        worst = std::max(worst, (attention_forward(x, p) - expect).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-9);
}

TEST_CASE("attention identities") {
    std::mt19937_64 rng(11);
    auto p = random_params(16, rng);
    const Mat x = random_matrix(16, 9, rng);

    SUBCASE("mu = 0 returns the input exactly") {
        p.mu = 0;
        CHECK(attention_forward(x, p) == x);
        CHECK(attention_forward_pooled<double>(x, 3, 3, p, 2) == x);
    }
    SUBCASE("single location") {
        const Mat one = x.col(0);
        const Mat alpha = attention_map(one, p);
        CHECK(alpha.size() == 1);
        CHECK(alpha(0, 0) == 1.0);
        CHECK((attention_forward(one, p) - (p.mu * p.w_v * one + one)).cwiseAbs().maxCoeff() < 1e-14);
    }
    SUBCASE("rows of the attention map sum to one") {
        const Mat big = random_matrix(16, 40, rng, 5.0);
        const Mat alpha = attention_map(big, p);
        CHECK((alpha.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
        CHECK((alpha.array() >= 0).all());
    }
    SUBCASE("zero input attends uniformly") {
        const Mat alpha = attention_map(Mat::Zero(16, 5), p);
        CHECK((alpha.array() - 0.2).abs().maxCoeff() < 1e-15);
    }
    SUBCASE("softmax is shift invariant") {
        Mat logits = random_matrix(4, 6, rng);
        Mat shifted = (logits.array() + 7.25).matrix();
        softmax_rows_inplace(logits);
        softmax_rows_inplace(shifted);
        CHECK((logits - shifted).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("permuting locations permutes the output") {
        std::vector<int> order(9);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        Mat xp(16, 9);
        for (int i = 0; i < 9; ++i) {
            xp.col(i) = x.col(order[static_cast<size_t>(i)]);
        }
        const Mat y = attention_forward(x, p);
        const Mat yp = attention_forward(xp, p);
        for (int i = 0; i < 9; ++i) {
            CHECK((yp.col(i) - y.col(order[static_cast<size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("pooled attention") {
    std::mt19937_64 rng(12);
    const auto p = random_params(8, rng);

    SUBCASE("factor 1 equals dense attention") {
        const Mat x = random_matrix(8, 5 * 7, rng);
        CHECK((attention_forward_pooled<double>(x, 5, 7, p, 1) - attention_forward(x, p)).cwiseAbs().maxCoeff() <
              1e-12);
    }
    SUBCASE("blocked queries agree with the oracle on pooled keys") {
        // 600 queries crosses the block boundary; keys/values come from the pooled map.
        const int h = 20, w = 30, f = 3;
        const Mat x = random_matrix(8, h * w, rng);
        Mat pooled(8, 7 * 10);
        for (int py = 0; py < 7; ++py) {
            for (int px = 0; px < 10; ++px) {
                Eigen::VectorXd acc = Eigen::VectorXd::Zero(8);
                int count = 0;
                for (int y = py * f; y < std::min(h, py * f + f); ++y) {
                    for (int xx = px * f; xx < std::min(w, px * f + f); ++xx) {
                        acc += x.col(y * w + xx);
                        ++count;
                    }
                }
                pooled.col(py * 10 + px) = acc / count;
            }
        }
        CHECK((average_pool<double>(x, h, w, f) - pooled).cwiseAbs().maxCoeff() < 1e-14);

        const Mat out = attention_forward_pooled<double>(x, h, w, p, f);
        Mat logits = (p.w_q * x).transpose() * (p.w_k * pooled);
        softmax_rows_inplace(logits);
        const Mat expect = p.mu * (p.w_v * pooled) * logits.transpose() + x;
        CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("attention shape errors") {
    std::mt19937_64 rng(13);
    const auto p = random_params(8, rng);
    CHECK_THROWS_AS(attention_forward(Mat::Zero(16, 3), p), DimensionMismatch);
    CHECK_THROWS_AS(attention_forward(Mat::Zero(12, 3), AttentionParams<double>::zeros(12)), InvalidArgument);
    CHECK_THROWS_AS(attention_forward(Mat::Zero(8, 0), p), InvalidArgument);
    CHECK_THROWS_AS(attention_forward_pooled<double>(Mat::Zero(8, 10), 3, 3, p, 1), DimensionMismatch);
}

TEST_CASE("float instantiation") {
    std::mt19937_64 rng(14);
    const auto pd = random_params(8, rng);
    const AttentionParams<float> pf{pd.w_q.cast<float>(), pd.w_k.cast<float>(), pd.w_v.cast<float>(),
                                    static_cast<float>(pd.mu)};
    const Mat x = random_matrix(8, 6, rng);
    const Eigen::MatrixXf yf = attention_forward(Eigen::MatrixXf(x.cast<float>()), pf);
    CHECK((yf.cast<double>() - attention_forward(x, pd)).cwiseAbs().maxCoeff() < 1e-4);
}
