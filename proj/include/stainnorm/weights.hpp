#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stainnorm/errors.hpp"

namespace stainnorm {

/// Dense float tensor with row-major data.
struct Tensor {
    std::vector<std::uint32_t> dims;
    Eigen::VectorXf values;

    Tensor() = default;
    Tensor(std::vector<std::uint32_t> d, Eigen::VectorXf v);
    static Tensor zeros(std::vector<std::uint32_t> d);
    static Tensor scalar(float v);

    std::size_t element_count() const;
    bool bitwise_equal(const Tensor& other) const;

    /// View as a dims[0] x (product of the rest) row-major matrix.
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> as_matrix() const;
};

/// Raw on-disk archive: ordered (name, tensor) entries, no semantic checks.
///
/// Layout, little-endian: "SAAS", u32 version, u32 count, then per tensor
/// u32 name length, name bytes, u32 rank, rank x u32 dims, f32 data; the file ends with
/// the CRC-32 of every preceding byte.
struct WeightArchive {
    std::uint32_t version = 1;
    std::vector<std::pair<std::string, Tensor>> entries;
};

inline constexpr std::uint32_t kWeightFormatVersion = 1;

void write_archive(const WeightArchive& archive, const std::filesystem::path& path);
WeightArchive read_archive(const std::filesystem::path& path);

enum class NormKind { none = 0, batch = 1, instance = 2 };

struct NetworkArch {
    int depth = 6;
    int base_channels = 64;
    int max_channels = 512;
    int attention_min_res = 32;  ///< feature maps larger than this pool keys and values
    NormKind norm = NormKind::batch;
    bool has_discriminator = false;
    int disc_base_channels = 64;

    int encoder_channels(int i) const;
    int decoder_channels(int d) const;  ///< output channels of decoder block d (1 .. depth-1)
    int decoder_inputs(int d) const;
    void validate() const;
    bool operator==(const NetworkArch&) const = default;
};

/// Attention pooling factor for an h x w feature map.
int attention_pool_factor(const NetworkArch& arch, int height, int width);

struct GeneratorWeights {
    NetworkArch arch;
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
};

/// Every (name, dims) pair the architecture requires, in a fixed order.
std::vector<std::pair<std::string, std::vector<std::uint32_t>>> weight_manifest(const NetworkArch& arch);

/// Conv kernels and attention projections: the layers kept at unit spectral norm.
bool is_spectral_layer(const std::string& name);

/// Spectral-norm view of a layer: conv kernels as out x rest, transposed-conv kernels
/// (stored in, out, kh, kw) permuted to out-first.
Eigen::MatrixXd spectral_matrix(const std::string& name, const Tensor& t);

/// Largest singular value, from the top eigenvalue of the smaller Gram matrix.
double top_singular_value(const Eigen::MatrixXd& m);

/// m / sigma_max(m); zero matrices are returned unchanged.
Eigen::MatrixXd spectral_normalize(const Eigen::MatrixXd& m);

GeneratorWeights apply_spectral_normalization(GeneratorWeights w);

inline constexpr double kSpectralTolerance = 1e-3;

/// Checks names, shapes, finiteness and the spectral bound; throws WeightFormatError.
void validate_weights(const GeneratorWeights& w);

void save_weights(const GeneratorWeights& w, const std::filesystem::path& path);
GeneratorWeights load_weights(const std::filesystem::path& path);

/// Archive conversion without validation.
WeightArchive to_archive(const GeneratorWeights& w);
GeneratorWeights from_archive(const WeightArchive& a);

}  // namespace stainnorm
