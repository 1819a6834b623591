#include "stainnorm/reference_weights.hpp"

#include <array>
#include <cmath>
#include <random>

namespace stainnorm {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Hinge locations and the inverse-tanh values interpolated between them; the ends are
// pinned at +-3.5 (tanh(3.5) ~ 0.998).
constexpr std::array<double, 9> kNodes = {-1.0, -0.95, -0.75, -0.4, 0.0, 0.4, 0.75, 0.95, 1.0};
constexpr double kEndValue = 3.5;

double node_value(size_t i) {
    if (i == 0) {
        return -kEndValue;
    }
    if (i == kNodes.size() - 1) {
        return kEndValue;
    }
    return std::atanh(kNodes[i]);
}

}  // namespace

GeneratorWeights random_weights(const NetworkArch& arch, std::uint64_t seed, float attention_mu) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    GeneratorWeights w;
    w.arch = arch;
    for (const auto& [name, dims] : weight_manifest(arch)) {
        Tensor t = Tensor::zeros(dims);
        if (ends_with(name, "running_var")) {
            for (auto& v : t.values) {
                v = 0.5f + unit(rng);
            }
        } else if (ends_with(name, "norm.weight")) {
            for (auto& v : t.values) {
                v = 0.8f + 0.4f * unit(rng);
            }
        } else if (ends_with(name, "attn.mu")) {
            t.values(0) = attention_mu;
        } else {
            const float scale = ends_with(name, "bias") || ends_with(name, "running_mean") ? 0.05f : 1.0f;
            for (auto& v : t.values) {
                v = scale * normal(rng);
            }
        }
        w.tensors.emplace(name, std::move(t));
    }
    return apply_spectral_normalization(std::move(w));
}

NetworkArch identity_arch() {
    NetworkArch a;
    a.depth = 2;
    a.base_channels = 96;
    a.norm = NormKind::batch;
    return a;
}

GeneratorWeights identity_weights() {
    GeneratorWeights w;
    w.arch = identity_arch();
    for (const auto& [name, dims] : weight_manifest(w.arch)) {
        Tensor t = Tensor::zeros(dims);
        if (ends_with(name, "running_var")) {
            t.values.setOnes();
        }
        w.tensors.emplace(name, std::move(t));
    }

    constexpr int kHinges = static_cast<int>(kNodes.size()) - 1;
    std::array<double, kHinges> coeff{};
    double previous_slope = 0;
    for (int k = 0; k < kHinges; ++k) {
        const double slope =
            (node_value(static_cast<size_t>(k) + 1) - node_value(static_cast<size_t>(k))) / (kNodes[k + 1] - kNodes[k]);
        coeff[static_cast<size_t>(k)] = slope - previous_slope;
        previous_slope = slope;
    }
    double coeff_sq = 0;
    for (double a : coeff) {
        coeff_sq += a * a;
    }
    // Output rows have 4 sub-pixels x kHinges entries of coeff / gain; pick the gain that
    // puts the layer's spectral norm at 0.5.
    const double gain = 2.0 * std::sqrt(4.0 * coeff_sq);
    const double pick = 1.0 / std::sqrt(static_cast<double>(kHinges));  // unit spectral norm for the split
    const double bn_scale = gain * std::sqrt(1.0 + 1e-5) / pick;

    Tensor& split = w.tensors.at("gen.enc0.conv.weight");          // (96, 3, 4, 4)
    Tensor& gamma = w.tensors.at("gen.enc0.norm.weight");
    Tensor& beta = w.tensors.at("gen.enc0.norm.bias");
    Tensor& merge = w.tensors.at("gen.out.convt.weight");           // (192, 3, 4, 4)
    Tensor& merge_bias = w.tensors.at("gen.out.convt.bias");
    const int skip_offset = w.arch.decoder_channels(1);
    for (int c = 0; c < 3; ++c) {
        merge_bias.values(c) = static_cast<float>(node_value(0));
        for (int sub = 0; sub < 4; ++sub) {
            const int ky = 1 + sub / 2;
            const int kx = 1 + sub % 2;
            for (int k = 0; k < kHinges; ++k) {
                const int ch = (c * 4 + sub) * kHinges + k;
                split.values(((ch * 3 + c) * 4 + ky) * 4 + kx) = static_cast<float>(pick);
                gamma.values(ch) = static_cast<float>(bn_scale);
                beta.values(ch) = static_cast<float>(-gain * kNodes[static_cast<size_t>(k)]);
                merge.values((((skip_offset + ch) * 3 + c) * 4 + ky) * 4 + kx) =
                    static_cast<float>(coeff[static_cast<size_t>(k)] / gain);
            }
        }
    }
    return w;
}

}  // namespace stainnorm
