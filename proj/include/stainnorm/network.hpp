#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <string>

#include "stainnorm/errors.hpp"
#include "stainnorm/imaging.hpp"
#include "stainnorm/weights.hpp"

namespace stainnorm {

/// C x (height * width) activations; column k is location k in row-major scan order.
template <typename Scalar>
struct FeatureMap {
    int height = 0;
    int width = 0;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> data;

    Eigen::Index channels() const { return data.rows(); }
};

/// 4 x 4 convolution. `kernel` is out x (in * 16) in (out, in, ky, kx) order.
template <typename Scalar, typename KernelDerived, typename BiasDerived>
FeatureMap<Scalar> conv2d(const FeatureMap<Scalar>& x, const Eigen::MatrixBase<KernelDerived>& kernel,
                          const Eigen::MatrixBase<BiasDerived>& bias, int stride, int pad = 1) {
    constexpr int k = 4;
    const Eigen::Index cin = x.channels();
    if (kernel.cols() != cin * k * k || bias.size() != kernel.rows()) {
        throw DimensionMismatch("conv kernel expects " + std::to_string(kernel.cols() / (k * k)) +
                                " input channels, got " + std::to_string(cin));
    }
    const int ho = (x.height + 2 * pad - k) / stride + 1;
    const int wo = (x.width + 2 * pad - k) / stride + 1;
    if (ho < 1 || wo < 1) {
        throw DimensionMismatch("feature map too small for a 4x4 convolution");
    }
    const Eigen::Index n = Eigen::Index{ho} * wo;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> cols(cin * k * k, n);
    for (Eigen::Index c = 0; c < cin; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const Eigen::Index r = (c * k + ky) * k + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        cols(r, Eigen::Index{oy} * wo + ox) =
                            (iy >= 0 && iy < x.height && ix >= 0 && ix < x.width)
                                ? x.data(c, Eigen::Index{iy} * x.width + ix)
                                : Scalar(0);
                    }
                }
            }
        }
    }
    FeatureMap<Scalar> out{ho, wo, {}};
    out.data.noalias() = kernel.template cast<Scalar>() * cols;
    out.data.colwise() += bias.template cast<Scalar>();
    return out;
}

/// 4 x 4 transposed convolution. `kernel` is in x (out * 16) in (in, out, ky, kx) order.
template <typename Scalar, typename KernelDerived, typename BiasDerived>
FeatureMap<Scalar> conv_transpose2d(const FeatureMap<Scalar>& x, const Eigen::MatrixBase<KernelDerived>& kernel,
                                    const Eigen::MatrixBase<BiasDerived>& bias, int stride, int pad = 1) {
    constexpr int k = 4;
    const Eigen::Index cin = x.channels();
    const Eigen::Index cout = kernel.cols() / (k * k);
    if (kernel.rows() != cin || bias.size() != cout) {
        throw DimensionMismatch("transposed conv kernel expects " + std::to_string(kernel.rows()) +
                                " input channels, got " + std::to_string(cin));
    }
    const int ho = (x.height - 1) * stride - 2 * pad + k;
    const int wo = (x.width - 1) * stride - 2 * pad + k;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> contrib =
        kernel.transpose().template cast<Scalar>() * x.data;
    FeatureMap<Scalar> out{ho, wo, Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(cout, Eigen::Index{ho} * wo)};
    for (int iy = 0; iy < x.height; ++iy) {
        for (int ix = 0; ix < x.width; ++ix) {
            const auto src = contrib.col(Eigen::Index{iy} * x.width + ix);
            for (int ky = 0; ky < k; ++ky) {
                const int oy = iy * stride - pad + ky;
                if (oy < 0 || oy >= ho) {
                    continue;
                }
                for (int kx = 0; kx < k; ++kx) {
                    const int ox = ix * stride - pad + kx;
                    if (ox < 0 || ox >= wo) {
                        continue;
                    }
                    auto dst = out.data.col(Eigen::Index{oy} * wo + ox);
                    for (Eigen::Index o = 0; o < cout; ++o) {
                        dst(o) += src(o * k * k + ky * k + kx);
                    }
                }
            }
        }
    }
    out.data.colwise() += bias.template cast<Scalar>();
    return out;
}

struct ForwardOptions {
    bool skip_attention = false;  ///< run as if every attention layer were removed
    bool drop_skips = false;      ///< feed zeros in place of encoder skip tensors
};

/// Generator on a model-space image; height and width must be divisible by 2^depth.
PlanarImage<float> generator_forward(const PlanarImage<float>& x, const GeneratorWeights& w,
                                     const ForwardOptions& opt = {});

RgbImage generator_forward(const RgbImage& img, const GeneratorWeights& w, const ForwardOptions& opt = {});

struct DiscriminatorOutput {
    Eigen::MatrixXf map;  ///< raw logits, rows = height
    double mean = 0;
};

DiscriminatorOutput discriminator_forward(const PlanarImage<float>& x, const GeneratorWeights& w);
DiscriminatorOutput discriminator_forward(const RgbImage& img, const GeneratorWeights& w);

}  // namespace stainnorm
