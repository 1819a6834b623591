#include "stainnorm/network.hpp"

#include <cmath>
#include <vector>

#include "stainnorm/attention.hpp"

namespace stainnorm {

namespace {

using Map = FeatureMap<float>;
using Matrix = Eigen::MatrixXf;
constexpr float kNormEps = 1e-5f;

enum class Activation { relu, leaky_relu, tanh };

Eigen::VectorXf vec(const Tensor& t) { return t.values; }

void normalize(Map& x, const GeneratorWeights& w, const std::string& prefix) {
    if (w.arch.norm == NormKind::none) {
        return;
    }
    const Eigen::VectorXf gamma = vec(w.at(prefix + "norm.weight"));
    const Eigen::VectorXf beta = vec(w.at(prefix + "norm.bias"));
    Eigen::VectorXf mean, var;
    if (w.arch.norm == NormKind::batch) {
        mean = vec(w.at(prefix + "norm.running_mean"));
        var = vec(w.at(prefix + "norm.running_var"));
    } else {
        mean = x.data.rowwise().mean();
        var = (x.data.colwise() - mean).array().square().rowwise().mean();
    }
    const Eigen::ArrayXf scale = gamma.array() / (var.array() + kNormEps).sqrt();
    const Eigen::ArrayXf shift = beta.array() - mean.array() * scale;
    x.data = ((x.data.array().colwise() * scale).colwise() + shift).matrix();
}

void activate(Map& x, Activation a) {
    switch (a) {
        case Activation::relu:
            x.data = x.data.cwiseMax(0.0f);
            break;
        case Activation::leaky_relu:
            x.data = x.data.unaryExpr([](float v) { return v > 0 ? v : 0.2f * v; });
            break;
        case Activation::tanh:
            x.data = x.data.array().tanh().matrix();
            break;
    }
}

void attend(Map& x, const GeneratorWeights& w, const std::string& prefix, const ForwardOptions& opt) {
    if (opt.skip_attention) {
        return;
    }
    AttentionParams<float> p{Matrix(w.at(prefix + "attn.wq").as_matrix()), Matrix(w.at(prefix + "attn.wk").as_matrix()),
                             Matrix(w.at(prefix + "attn.wv").as_matrix()), w.at(prefix + "attn.mu").values(0)};
    x.data = attention_forward_pooled<float>(x.data, x.height, x.width, p,
                                             attention_pool_factor(w.arch, x.height, x.width));
}

Map conv_block(const Map& x, const GeneratorWeights& w, const std::string& prefix, bool transposed, int stride,
               Activation act, const ForwardOptions& opt) {
    const std::string conv = transposed ? "convt" : "conv";
    const Tensor& kernel = w.at(prefix + conv + ".weight");
    const Tensor& bias = w.at(prefix + conv + ".bias");
    Map y = transposed ? conv_transpose2d(x, kernel.as_matrix(), bias.values, stride)
                       : conv2d(x, kernel.as_matrix(), bias.values, stride);
    normalize(y, w, prefix);
    activate(y, act);
    attend(y, w, prefix, opt);
    return y;
}

Map concat(const Map& a, const Map& b, bool zero_b) {
    Map out{a.height, a.width, Matrix(a.channels() + b.channels(), a.data.cols())};
    out.data.topRows(a.channels()) = a.data;
    if (zero_b) {
        out.data.bottomRows(b.channels()).setZero();
    } else {
        out.data.bottomRows(b.channels()) = b.data;
    }
    return out;
}

Map from_planar(const PlanarImage<float>& x) { return {x.height, x.width, x.data.matrix()}; }

}  // namespace

PlanarImage<float> generator_forward(const PlanarImage<float>& x, const GeneratorWeights& w,
                                     const ForwardOptions& opt) {
    const NetworkArch& arch = w.arch;
    arch.validate();
    const int unit = 1 << arch.depth;
    if (x.width % unit != 0 || x.height % unit != 0) {
        throw DimensionMismatch("generator input " + std::to_string(x.width) + "x" + std::to_string(x.height) +
                                " is not divisible by " + std::to_string(unit));
    }
    std::vector<Map> enc;
    enc.reserve(static_cast<size_t>(arch.depth));
    Map h = from_planar(x);
    for (int i = 0; i < arch.depth; ++i) {
        h = conv_block(h, w, "gen.enc" + std::to_string(i) + ".", false, 2, Activation::relu, opt);
        enc.push_back(h);
    }
    h = conv_block(enc.back(), w, "gen.dec" + std::to_string(arch.depth - 1) + ".", true, 2, Activation::relu, opt);
    for (int d = arch.depth - 2; d >= 1; --d) {
        h = conv_block(concat(h, enc[static_cast<size_t>(d)], opt.drop_skips), w, "gen.dec" + std::to_string(d) + ".",
                       true, 2, Activation::relu, opt);
    }
    const Map in = concat(h, enc.front(), opt.drop_skips);
    Map out = conv_transpose2d(in, w.at("gen.out.convt.weight").as_matrix(), w.at("gen.out.convt.bias").values, 2);
    activate(out, Activation::tanh);
    return {out.width, out.height, out.data.array()};
}

RgbImage generator_forward(const RgbImage& img, const GeneratorWeights& w, const ForwardOptions& opt) {
    return from_model(generator_forward(to_model<float>(img), w, opt));
}

DiscriminatorOutput discriminator_forward(const PlanarImage<float>& x, const GeneratorWeights& w) {
    if (!w.arch.has_discriminator) {
        throw WeightFormatError("weight file carries no discriminator");
    }
    Map h = from_planar(x);
    for (int i = 0; i < 3; ++i) {
        h = conv_block(h, w, "disc.blk" + std::to_string(i) + ".", false, 2, Activation::leaky_relu, {});
    }
    h = conv2d(h, w.at("disc.out.conv.weight").as_matrix(), w.at("disc.out.conv.bias").values, 1);
    DiscriminatorOutput r;
    r.map = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        h.data.data(), h.height, h.width);
    r.mean = r.map.cast<double>().mean();
    return r;
}

DiscriminatorOutput discriminator_forward(const RgbImage& img, const GeneratorWeights& w) {
    return discriminator_forward(to_model<float>(img), w);
}

}  // namespace stainnorm
