#include "stainnorm/weights.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "stainnorm/errors.hpp"

namespace stainnorm {

static_assert(std::endian::native == std::endian::little, "weight files are read and written as little-endian");

namespace {

constexpr char kMagic[4] = {'S', 'A', 'A', 'S'};
constexpr std::uint32_t kMaxRank = 8;

std::string dims_text(const std::vector<std::uint32_t>& dims) {
    std::string s = "[";
    for (size_t i = 0; i < dims.size(); ++i) {
        s += (i ? "," : "") + std::to_string(dims[i]);
    }
    return s + "]";
}

class Writer {
public:
    void u32(std::uint32_t v) { raw(&v, 4); }
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const char*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    std::vector<char>& bytes() { return bytes_; }

private:
    std::vector<char> bytes_;
};

class Reader {
public:
    Reader(const std::vector<char>& bytes, size_t end) : bytes_(bytes), end_(end) {}

    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        raw(&v, 4, what);
        return v;
    }
    void raw(void* out, size_t n, const char* what) {
        if (n > end_ - pos_) {
            throw WeightFormatError(std::string("weight file truncated while reading ") + what);
        }
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }
    size_t remaining() const { return end_ - pos_; }

private:
    const std::vector<char>& bytes_;
    size_t end_;
    size_t pos_ = 0;
};

std::uint32_t checksum(const char* data, size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

const char* const kMetaNames[] = {"meta.format_version", "meta.depth",           "meta.base_channels",
                                  "meta.max_channels",   "meta.attention_min_res", "meta.norm_kind",
                                  "meta.has_discriminator", "meta.disc_base_channels"};

int meta_int(const std::map<std::string, Tensor>& meta, const std::string& name) {
    const auto it = meta.find(name);
    if (it == meta.end()) {
        throw WeightFormatError("missing tensor '" + name + "'");
    }
    if (it->second.element_count() != 1) {
        throw WeightFormatError("metadata tensor '" + name + "' must hold one value");
    }
    const float v = it->second.values(0);
    if (!std::isfinite(v) || v != std::round(v) || std::abs(v) > 1e6f) {
        throw WeightFormatError("metadata tensor '" + name + "' is not an integer");
    }
    return static_cast<int>(v);
}

void add_block(std::vector<std::pair<std::string, std::vector<std::uint32_t>>>& m, const std::string& prefix,
               const std::string& conv, std::uint32_t cin, std::uint32_t cout, bool transposed, NormKind norm,
               bool attention) {
    const std::uint32_t c_out = cout;
    m.push_back({prefix + conv + ".weight", transposed ? std::vector<std::uint32_t>{cin, cout, 4, 4}
                                                       : std::vector<std::uint32_t>{cout, cin, 4, 4}});
    m.push_back({prefix + conv + ".bias", {c_out}});
    if (norm != NormKind::none) {
        m.push_back({prefix + "norm.weight", {c_out}});
        m.push_back({prefix + "norm.bias", {c_out}});
        if (norm == NormKind::batch) {
            m.push_back({prefix + "norm.running_mean", {c_out}});
            m.push_back({prefix + "norm.running_var", {c_out}});
        }
    }
    if (attention) {
        m.push_back({prefix + "attn.wq", {c_out / 8, c_out}});
        m.push_back({prefix + "attn.wk", {c_out / 8, c_out}});
        m.push_back({prefix + "attn.wv", {c_out, c_out}});
        m.push_back({prefix + "attn.mu", {1}});
    }
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Tensor::Tensor(std::vector<std::uint32_t> d, Eigen::VectorXf v) : dims(std::move(d)), values(std::move(v)) {
    if (element_count() != static_cast<size_t>(values.size())) {
        throw DimensionMismatch("tensor dims " + dims_text(dims) + " do not match " + std::to_string(values.size()) +
                                " values");
    }
}

Tensor Tensor::zeros(std::vector<std::uint32_t> d) {
    Tensor t;
    t.dims = std::move(d);
    t.values = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(t.element_count()));
    return t;
}

Tensor Tensor::scalar(float v) { return Tensor({1}, Eigen::VectorXf::Constant(1, v)); }

size_t Tensor::element_count() const {
    size_t n = 1;
    for (auto d : dims) {
        n *= d;
    }
    return n;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
    return dims == other.dims && values.size() == other.values.size() &&
           std::memcmp(values.data(), other.values.data(), sizeof(float) * static_cast<size_t>(values.size())) == 0;
}

Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Tensor::as_matrix() const {
    const Eigen::Index rows = dims.empty() ? 1 : dims[0];
    const Eigen::Index cols = rows == 0 ? 0 : values.size() / rows;
    return {values.data(), rows, cols};
}

void write_archive(const WeightArchive& archive, const std::filesystem::path& path) {
    Writer w;
    w.raw(kMagic, 4);
    w.u32(archive.version);
    w.u32(static_cast<std::uint32_t>(archive.entries.size()));
    for (const auto& [name, t] : archive.entries) {
        if (t.element_count() != static_cast<size_t>(t.values.size())) {
            throw DimensionMismatch("tensor '" + name + "' has inconsistent dims");
        }
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.raw(name.data(), name.size());
        w.u32(static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) {
            w.u32(d);
        }
        w.raw(t.values.data(), sizeof(float) * static_cast<size_t>(t.values.size()));
    }
    w.u32(checksum(w.bytes().data(), w.bytes().size()));

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
        if (!out) {
            throw WeightFormatError("cannot write weight file " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

WeightArchive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw WeightFormatError("cannot open weight file " + path.string());
    }
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16) {
        throw WeightFormatError("weight file " + path.string() + " is too short");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw WeightFormatError("bad magic in " + path.string() + " (expected SAAS)");
    }
    const size_t body = bytes.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body, 4);
    if (stored != checksum(bytes.data(), body)) {
        throw WeightFormatError("checksum mismatch in " + path.string() + ": file is corrupted");
    }

    Reader r(bytes, body);
    char magic[4];
    r.raw(magic, 4, "magic");
    WeightArchive a;
    a.version = r.u32("version");
    if (a.version != kWeightFormatVersion) {
        throw WeightFormatError("unsupported weight format version " + std::to_string(a.version) + " (expected " +
                                std::to_string(kWeightFormatVersion) + ")");
    }
    const std::uint32_t count = r.u32("tensor count");
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32("name length");
        if (name_len == 0 || name_len > r.remaining()) {
            throw WeightFormatError("invalid name length in tensor " + std::to_string(i));
        }
        std::string name(name_len, '\0');
        r.raw(name.data(), name_len, "tensor name");
        const std::uint32_t rank = r.u32("rank");
        if (rank > kMaxRank) {
            throw WeightFormatError("tensor '" + name + "' has rank " + std::to_string(rank));
        }
        std::vector<std::uint32_t> dims(rank);
        size_t n = 1;
        for (auto& d : dims) {
            d = r.u32("dims");
            n *= d;
            if (n > r.remaining() / sizeof(float)) {
                throw WeightFormatError("tensor '" + name + "' is larger than the file");
            }
        }
        Eigen::VectorXf values(static_cast<Eigen::Index>(n));
        r.raw(values.data(), n * sizeof(float), "tensor data");
        if (!seen.insert(name).second) {
            throw WeightFormatError("duplicate tensor '" + name + "'");
        }
        a.entries.emplace_back(std::move(name), Tensor(std::move(dims), std::move(values)));
    }
    if (r.remaining() != 0) {
        throw WeightFormatError("unexpected trailing bytes in " + path.string());
    }
    return a;
}

int NetworkArch::encoder_channels(int i) const {
    long c = base_channels;
    for (int k = 0; k < i && c < max_channels; ++k) {
        c *= 2;
    }
    return static_cast<int>(std::min<long>(c, max_channels));
}

int NetworkArch::decoder_channels(int d) const { return encoder_channels(d - 1); }

int NetworkArch::decoder_inputs(int d) const {
    return d == depth - 1 ? encoder_channels(depth - 1) : decoder_channels(d + 1) + encoder_channels(d);
}

void NetworkArch::validate() const {
    if (depth < 2 || depth > 10) {
        throw InvalidArgument("network depth must be in [2, 10], got " + std::to_string(depth));
    }
    if (base_channels < 8 || base_channels % 8 != 0 || max_channels % 8 != 0 || max_channels < base_channels) {
        throw InvalidArgument("channel counts must be positive multiples of 8 with max >= base");
    }
    if (attention_min_res < 1) {
        throw InvalidArgument("attention_min_res must be at least 1");
    }
    if (has_discriminator && (disc_base_channels < 8 || disc_base_channels % 8 != 0)) {
        throw InvalidArgument("discriminator base channels must be a positive multiple of 8");
    }
}

int attention_pool_factor(const NetworkArch& arch, int height, int width) {
    const int extent = std::max(height, width);
    return std::max(1, (extent + arch.attention_min_res - 1) / arch.attention_min_res);
}

const Tensor& GeneratorWeights::at(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw WeightFormatError("missing tensor '" + name + "'");
    }
    return it->second;
}

std::vector<std::pair<std::string, std::vector<std::uint32_t>>> weight_manifest(const NetworkArch& arch) {
    arch.validate();
    std::vector<std::pair<std::string, std::vector<std::uint32_t>>> m;
    const auto u = [](int v) { return static_cast<std::uint32_t>(v); };
    for (int i = 0; i < arch.depth; ++i) {
        const int cin = i == 0 ? 3 : arch.encoder_channels(i - 1);
        add_block(m, "gen.enc" + std::to_string(i) + ".", "conv", u(cin), u(arch.encoder_channels(i)), false,
                  arch.norm, true);
    }
    for (int d = arch.depth - 1; d >= 1; --d) {
        add_block(m, "gen.dec" + std::to_string(d) + ".", "convt", u(arch.decoder_inputs(d)),
                  u(arch.decoder_channels(d)), true, arch.norm, true);
    }
    add_block(m, "gen.out.", "convt", u(2 * arch.encoder_channels(0)), 3, true, NormKind::none, false);
    if (arch.has_discriminator) {
        int cin = 3;
        for (int i = 0; i < 3; ++i) {
            const int cout = std::min(arch.disc_base_channels << i, arch.max_channels);
            add_block(m, "disc.blk" + std::to_string(i) + ".", "conv", u(cin), u(cout), false, arch.norm, true);
            cin = cout;
        }
        add_block(m, "disc.out.", "conv", u(cin), 1, false, NormKind::none, false);
    }
    return m;
}

bool is_spectral_layer(const std::string& name) {
    return ends_with(name, ".conv.weight") || ends_with(name, ".convt.weight") || ends_with(name, ".attn.wq") ||
           ends_with(name, ".attn.wk") || ends_with(name, ".attn.wv");
}

Eigen::MatrixXd spectral_matrix(const std::string& name, const Tensor& t) {
    if (ends_with(name, ".convt.weight")) {
        if (t.dims.size() != 4) {
            throw DimensionMismatch("transposed-conv kernel '" + name + "' must have rank 4");
        }
        const Eigen::Index cin = t.dims[0], cout = t.dims[1], k = t.dims[2] * t.dims[3];
        Eigen::MatrixXd m(cout, cin * k);
        for (Eigen::Index i = 0; i < cin; ++i) {
            for (Eigen::Index o = 0; o < cout; ++o) {
                for (Eigen::Index s = 0; s < k; ++s) {
                    m(o, i * k + s) = t.values((i * cout + o) * k + s);
                }
            }
        }
        return m;
    }
    return t.as_matrix().cast<double>();
}

double top_singular_value(const Eigen::MatrixXd& m) {
    if (m.size() == 0) {
        return 0.0;
    }
    const bool wide = m.rows() <= m.cols();
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(wide ? m.rows() : m.cols(), wide ? m.rows() : m.cols());
    if (wide) {
        gram.selfadjointView<Eigen::Lower>().rankUpdate(m);
    } else {
        gram.selfadjointView<Eigen::Lower>().rankUpdate(m.transpose());
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    return std::sqrt(std::max(0.0, eig.eigenvalues()(gram.rows() - 1)));
}

Eigen::MatrixXd spectral_normalize(const Eigen::MatrixXd& m) {
    const double s = top_singular_value(m);
    return s > 0 ? Eigen::MatrixXd(m / s) : m;
}

GeneratorWeights apply_spectral_normalization(GeneratorWeights w) {
    for (auto& [name, t] : w.tensors) {
        if (!is_spectral_layer(name)) {
            continue;
        }
        const double s = top_singular_value(spectral_matrix(name, t));
        if (s > 0) {
            t.values = (t.values.cast<double>() / s).cast<float>();
        }
    }
    return w;
}

void validate_weights(const GeneratorWeights& w) {
    try {
        w.arch.validate();
    } catch (const InvalidArgument& e) {
        throw WeightFormatError(std::string("invalid architecture metadata: ") + e.what());
    }
    const auto manifest = weight_manifest(w.arch);
    std::set<std::string> expected;
    for (const auto& [name, dims] : manifest) {
        expected.insert(name);
        const auto it = w.tensors.find(name);
        if (it == w.tensors.end()) {
            throw WeightFormatError("missing tensor '" + name + "'");
        }
        if (it->second.dims != dims) {
            throw WeightFormatError("tensor '" + name + "' has dims " + dims_text(it->second.dims) + ", expected " +
                                    dims_text(dims));
        }
    }
    for (const auto& [name, t] : w.tensors) {
        if (!expected.count(name)) {
            throw WeightFormatError("unexpected tensor '" + name + "'");
        }
        if (!t.values.allFinite()) {
            throw WeightFormatError("tensor '" + name + "' contains a non-finite value");
        }
        if (ends_with(name, "running_var") && (t.values.array() < 0).any()) {
            throw WeightFormatError("tensor '" + name + "' has a negative variance");
        }
    }
    for (const auto& [name, t] : w.tensors) {
        if (!is_spectral_layer(name)) {
            continue;
        }
        const double s = top_singular_value(spectral_matrix(name, t));
        if (s > 1.0 + kSpectralTolerance) {
            throw WeightFormatError("spectral norm of '" + name + "' is " + std::to_string(s) + ", exceeds 1");
        }
    }
}

WeightArchive to_archive(const GeneratorWeights& w) {
    WeightArchive a;
    a.version = kWeightFormatVersion;
    const float values[] = {static_cast<float>(kWeightFormatVersion),
                            static_cast<float>(w.arch.depth),
                            static_cast<float>(w.arch.base_channels),
                            static_cast<float>(w.arch.max_channels),
                            static_cast<float>(w.arch.attention_min_res),
                            static_cast<float>(static_cast<int>(w.arch.norm)),
                            w.arch.has_discriminator ? 1.0f : 0.0f,
                            static_cast<float>(w.arch.disc_base_channels)};
    for (size_t i = 0; i < std::size(kMetaNames); ++i) {
        a.entries.emplace_back(kMetaNames[i], Tensor::scalar(values[i]));
    }
    for (const auto& entry : w.tensors) {
        a.entries.push_back(entry);
    }
    return a;
}

GeneratorWeights from_archive(const WeightArchive& a) {
    std::map<std::string, Tensor> meta;
    GeneratorWeights w;
    for (const auto& [name, t] : a.entries) {
        auto& dest = name.rfind("meta.", 0) == 0 ? meta : w.tensors;
        if (!dest.emplace(name, t).second) {
            throw WeightFormatError("duplicate tensor '" + name + "'");
        }
    }
    if (meta_int(meta, "meta.format_version") != static_cast<int>(a.version)) {
        throw WeightFormatError("metadata format_version disagrees with the file header");
    }
    w.arch.depth = meta_int(meta, "meta.depth");
    w.arch.base_channels = meta_int(meta, "meta.base_channels");
    w.arch.max_channels = meta_int(meta, "meta.max_channels");
    w.arch.attention_min_res = meta_int(meta, "meta.attention_min_res");
    const int norm = meta_int(meta, "meta.norm_kind");
    if (norm < 0 || norm > 2) {
        throw WeightFormatError("unknown norm kind " + std::to_string(norm));
    }
    w.arch.norm = static_cast<NormKind>(norm);
    const int disc = meta_int(meta, "meta.has_discriminator");
    if (disc != 0 && disc != 1) {
        throw WeightFormatError("meta.has_discriminator must be 0 or 1");
    }
    w.arch.has_discriminator = disc == 1;
    w.arch.disc_base_channels = meta_int(meta, "meta.disc_base_channels");
    for (const auto& [name, t] : meta) {
        if (std::find(std::begin(kMetaNames), std::end(kMetaNames), name) == std::end(kMetaNames)) {
            throw WeightFormatError("unexpected tensor '" + name + "'");
        }
    }
    return w;
}

void save_weights(const GeneratorWeights& w, const std::filesystem::path& path) { write_archive(to_archive(w), path); }

GeneratorWeights load_weights(const std::filesystem::path& path) {
    GeneratorWeights w = from_archive(read_archive(path));
    validate_weights(w);
    return w;
}

}  // namespace stainnorm
