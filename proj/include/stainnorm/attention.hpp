#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <string>

#include "stainnorm/errors.hpp"

namespace stainnorm {

/// Non-local self-attention block over a C x N feature matrix (one column per location).
///
/// Queries and keys are projected to C/8 channels; values keep all C channels so the
/// attended output can be added back onto the input.
template <typename Scalar>
struct AttentionParams {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    Matrix w_q;  ///< (C/8) x C
    Matrix w_k;  ///< (C/8) x C
    Matrix w_v;  ///< C x C
    Scalar mu = 0;

    static AttentionParams zeros(Eigen::Index channels) {
        const Eigen::Index reduced = channels / 8;
        return {Matrix::Zero(reduced, channels), Matrix::Zero(reduced, channels), Matrix::Zero(channels, channels),
                Scalar(0)};
    }

    void validate(Eigen::Index channels) const {
        if (channels < 8 || channels % 8 != 0) {
            throw InvalidArgument("attention needs a channel count divisible by 8, got " + std::to_string(channels));
        }
        const Eigen::Index reduced = channels / 8;
        if (w_q.rows() != reduced || w_q.cols() != channels || w_k.rows() != reduced || w_k.cols() != channels ||
            w_v.rows() != channels || w_v.cols() != channels) {
            throw DimensionMismatch("attention projections do not match " + std::to_string(channels) +
                                    " input channels");
        }
    }
};

/// Softmax over each row, shifted by the row maximum.
template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& logits) {
    for (Eigen::Index j = 0; j < logits.rows(); ++j) {
        auto row = logits.row(j);
        const auto peak = row.maxCoeff();
        row = (row.array() - peak).exp().matrix();
        row /= row.sum();
    }
}

/// alpha(j, i): weight placed on location i while producing location j. Each row sums to one.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> attention_map(const Eigen::MatrixBase<Derived>& x,
                                                                     const AttentionParams<Scalar>& p) {
    p.validate(x.rows());
    if (x.cols() < 1) {
        throw InvalidArgument("attention needs at least one location");
    }
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> q = p.w_q * x;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> k = p.w_k * x;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> alpha = q.transpose() * k;
    softmax_rows_inplace(alpha);
    return alpha;
}

/// mu * o + x with o_j = sum_i alpha(j, i) W_v x_i.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> attention_forward(const Eigen::MatrixBase<Derived>& x,
                                                                        const AttentionParams<Scalar>& p) {
    const auto alpha = attention_map(x, p);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> v = p.w_v * x;
    return p.mu * (v * alpha.transpose()) + x;
}

/// Averages non-overlapping factor x factor cells of a C x (height * width) map; edge cells
/// that run past the border average only the pixels they cover.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> average_pool(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x, int height, int width, int factor) {
    const int ph = (height + factor - 1) / factor;
    const int pw = (width + factor - 1) / factor;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out =
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(x.rows(), Eigen::Index{ph} * pw);
    for (int py = 0; py < ph; ++py) {
        for (int px = 0; px < pw; ++px) {
            const int y1 = std::min(height, (py + 1) * factor);
            const int x1 = std::min(width, (px + 1) * factor);
            auto cell = out.col(Eigen::Index{py} * pw + px);
            for (int y = py * factor; y < y1; ++y) {
                for (int xx = px * factor; xx < x1; ++xx) {
                    cell += x.col(Eigen::Index{y} * width + xx);
                }
            }
            cell /= Scalar((y1 - py * factor) * (x1 - px * factor));
        }
    }
    return out;
}

/// Attention over a spatial feature map whose keys and values come from an average-pooled
/// copy of the input. Queries are processed in blocks so memory stays O(block * keys).
/// With factor == 1 this equals attention_forward.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> attention_forward_pooled(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x, int height, int width,
    const AttentionParams<Scalar>& p, int factor) {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    p.validate(x.rows());
    if (x.cols() != Eigen::Index{height} * width) {
        throw DimensionMismatch("feature map has " + std::to_string(x.cols()) + " locations, expected " +
                                std::to_string(Eigen::Index{height} * width));
    }
    if (p.mu == Scalar(0)) {
        return x;
    }
    const Matrix pooled = factor > 1 ? average_pool<Scalar>(x, height, width, factor) : x;
    const Matrix q = p.w_q * x;
    const Matrix k = p.w_k * pooled;
    const Matrix v = p.w_v * pooled;

    constexpr Eigen::Index kBlock = 256;
    Matrix out = x;
    for (Eigen::Index j0 = 0; j0 < x.cols(); j0 += kBlock) {
        const Eigen::Index nb = std::min(kBlock, x.cols() - j0);
        Matrix alpha = q.middleCols(j0, nb).transpose() * k;
        softmax_rows_inplace(alpha);
        out.middleCols(j0, nb).noalias() += p.mu * (v * alpha.transpose());
    }
    return out;
}

}  // namespace stainnorm
