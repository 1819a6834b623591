#include "stainnorm/losses.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "stainnorm/stats.hpp"
#include "stainnorm/wsi.hpp"

namespace stainnorm {

namespace {

void require_batch(std::span<const double> v, const char* what) {
    if (v.empty()) {
        throw InvalidArgument(std::string("empty discriminator batch: ") + what);
    }
    for (double d : v) {
        if (!std::isfinite(d)) {
            throw InvalidArgument(std::string("non-finite discriminator output in ") + what);
        }
    }
}

double mean_of(std::span<const double> v) { return pairwise_sum(v) / static_cast<double>(v.size()); }

template <typename F>
double mean_map(std::span<const double> v, F f) {
    std::vector<double> t(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        t[i] = f(v[i]);
    }
    return mean_of(t);
}

// E[log D] needs D in (0, 1]; E[log(1 - D)] needs D in [0, 1).
double mean_log(std::span<const double> d, const char* what) {
    return mean_map(d, [what](double v) {
        if (!(v > 0.0 && v <= 1.0)) {
            throw InvalidArgument(std::string(what) + ": probability " + std::to_string(v) + " outside (0, 1]");
        }
        return std::log(v);
    });
}

double mean_log_complement(std::span<const double> d, const char* what) {
    return mean_map(d, [what](double v) {
        if (!(v >= 0.0 && v < 1.0)) {
            throw InvalidArgument(std::string(what) + ": probability " + std::to_string(v) + " outside [0, 1)");
        }
        return std::log1p(-v);
    });
}

void check_pairs(std::span<const ModelImage> a, std::span<const ModelImage> b, const char* what) {
    if (a.empty() || a.size() != b.size()) {
        throw DimensionMismatch(std::string(what) + ": batches of " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " images");
    }
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].width != b[i].width || a[i].height != b[i].height || a[i].data.cols() != b[i].data.cols()) {
            throw DimensionMismatch(std::string(what) + ": image " + std::to_string(i) + " differs in size");
        }
    }
}

double batch_l1(std::span<const ModelImage> a, std::span<const ModelImage> b, const char* what) {
    check_pairs(a, b, what);
    std::vector<double> per(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        const Eigen::ArrayXXd diff = (a[i].data - b[i].data).abs();
        per[i] = pairwise_sum<double>(std::span<const double>(diff.data(), static_cast<size_t>(diff.size()))) /
                 static_cast<double>(diff.size());
    }
    return mean_of(per);
}

double batch_dssim(std::span<const ModelImage> a, std::span<const ModelImage> b, const SsimParams& p,
                   const char* what) {
    check_pairs(a, b, what);
    std::vector<double> per(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        per[i] = (1.0 - ssim(to_grayscale(a[i]), to_grayscale(b[i]), p)) / 2.0;
    }
    return mean_of(per);
}

}  // namespace

AdversarialMode parse_adversarial_mode(const std::string& s) {
    if (s == "ce") {
        return AdversarialMode::cross_entropy;
    }
    if (s == "ls") {
        return AdversarialMode::least_squares;
    }
    throw InvalidArgument("unknown adversarial mode '" + s + "' (expected ce or ls)");
}

void LossWeights::validate() const {
    for (double v : {alpha, beta, gamma, delta}) {
        if (!(v >= 0) || !std::isfinite(v)) {
            throw InvalidArgument("loss weights must be finite and non-negative");
        }
    }
}

double adv_loss_y(std::span<const double> d_real, std::span<const double> d_fake, AdversarialMode mode) {
    require_batch(d_real, "real scores");
    require_batch(d_fake, "fake scores");
    if (mode == AdversarialMode::cross_entropy) {
        return mean_log(d_real, "D(real)") + mean_log_complement(d_fake, "D(fake)");
    }
    return mean_map(d_real, [](double v) { return (v - 1) * (v - 1); }) + mean_map(d_fake, [](double v) { return v * v; });
}

double boundary_term(std::span<const double> d_x_on_real_y, AdversarialMode mode) {
    require_batch(d_x_on_real_y, "boundary scores");
    if (mode == AdversarialMode::cross_entropy) {
        return mean_log_complement(d_x_on_real_y, "D_X(y)");
    }
    return mean_map(d_x_on_real_y, [](double v) { return v * v; });
}

double adv_loss_x_with_boundary(std::span<const double> d_real, std::span<const double> d_fake,
                                std::span<const double> d_x_on_real_y, AdversarialMode mode) {
    return adv_loss_y(d_real, d_fake, mode) + boundary_term(d_x_on_real_y, mode);
}

double ls_generator_term(std::span<const double> d_fake) {
    require_batch(d_fake, "fake scores");
    return mean_map(d_fake, [](double v) { return (v - 1) * (v - 1); });
}

double cycle_loss(std::span<const ModelImage> x, std::span<const ModelImage> cycled_x, std::span<const ModelImage> y,
                  std::span<const ModelImage> cycled_y) {
    return batch_l1(cycled_x, x, "cycle x") + batch_l1(cycled_y, y, "cycle y");
}

double structural_cycle_loss(std::span<const ModelImage> x, std::span<const ModelImage> cycled_x,
                             std::span<const ModelImage> y, std::span<const ModelImage> cycled_y,
                             const SsimParams& p) {
    return batch_dssim(cycled_x, x, p, "structural cycle x") + batch_dssim(cycled_y, y, p, "structural cycle y");
}

double dssim_mapped_loss(std::span<const ModelImage> x, std::span<const ModelImage> fake_y,
                         std::span<const ModelImage> y, std::span<const ModelImage> fake_x, const SsimParams& p) {
    return batch_dssim(fake_y, x, p, "mapped x") + batch_dssim(fake_x, y, p, "mapped y");
}

double identity_loss(std::span<const ModelImage> y, std::span<const ModelImage> id_y, std::span<const ModelImage> x,
                     std::span<const ModelImage> id_x) {
    return batch_l1(id_y, y, "identity y") + batch_l1(id_x, x, "identity x");
}

void BatchBundle::validate() const {
    const size_t nx = x.size();
    const size_t ny = y.size();
    if (nx == 0 || ny == 0) {
        throw InvalidArgument("incomplete bundle: empty source or target batch");
    }
    const auto need = [](size_t have, size_t want, const char* what) {
        if (have != want) {
            throw InvalidArgument(std::string("incomplete bundle: ") + what + " has " + std::to_string(have) +
                                  " entries, expected " + std::to_string(want));
        }
    };
    need(fake_y.size(), nx, "fake_y");
    need(cycled_x.size(), nx, "cycled_x");
    need(id_x.size(), nx, "id_x");
    need(fake_x.size(), ny, "fake_x");
    need(cycled_y.size(), ny, "cycled_y");
    need(id_y.size(), ny, "id_y");
    need(d.d_y_real.size(), ny, "d_y_real");
    need(d.d_y_fake.size(), nx, "d_y_fake");
    need(d.d_x_real.size(), nx, "d_x_real");
    need(d.d_x_fake.size(), ny, "d_x_fake");
    need(d.d_x_on_y.size(), ny, "d_x_on_y");
}

double weighted_total(const LossBreakdown& b, const LossWeights& w) {
    double t = b.adv_y;
    t += b.adv_x;
    t += w.alpha * b.cyc;
    t += w.beta * b.scyc;
    t += w.gamma * b.dssim;
    t += w.delta * b.id;
    return t;
}

LossBreakdown total_objective(const BatchBundle& bundle, const LossWeights& w, const SsimParams& p,
                              AdversarialMode mode) {
    w.validate();
    bundle.validate();
    LossBreakdown b;
    b.adv_y = adv_loss_y(bundle.d.d_y_real, bundle.d.d_y_fake, mode);
    b.boundary = boundary_term(bundle.d.d_x_on_y, mode);
    b.adv_x = adv_loss_y(bundle.d.d_x_real, bundle.d.d_x_fake, mode) + b.boundary;
    b.cyc = cycle_loss(bundle.x, bundle.cycled_x, bundle.y, bundle.cycled_y);
    b.scyc = structural_cycle_loss(bundle.x, bundle.cycled_x, bundle.y, bundle.cycled_y, p);
    b.dssim = dssim_mapped_loss(bundle.x, bundle.fake_y, bundle.y, bundle.fake_x, p);
    b.id = identity_loss(bundle.y, bundle.id_y, bundle.x, bundle.id_x);
    b.total = weighted_total(b, w);
    return b;
}

std::string loss_row(const LossBreakdown& b) {
    std::ostringstream os;
    os << std::setprecision(12);
    os << b.adv_y << ',' << b.adv_x << ',' << b.boundary << ',' << b.cyc << ',' << b.scyc << ',' << b.dssim << ','
       << b.id << ',' << b.total;
    return os.str();
}

namespace {

struct BundleField {
    const char* name;
    std::vector<ModelImage> BatchBundle::*images;
};

constexpr BundleField kImageFields[] = {
    {"x", &BatchBundle::x},           {"y", &BatchBundle::y},
    {"fake_y", &BatchBundle::fake_y}, {"fake_x", &BatchBundle::fake_x},
    {"cycled_x", &BatchBundle::cycled_x}, {"cycled_y", &BatchBundle::cycled_y},
    {"id_x", &BatchBundle::id_x},     {"id_y", &BatchBundle::id_y},
};

struct ScoreField {
    const char* name;
    std::vector<double> DiscriminatorScores::*scores;
};

constexpr ScoreField kScoreFields[] = {
    {"d.d_y_real", &DiscriminatorScores::d_y_real}, {"d.d_y_fake", &DiscriminatorScores::d_y_fake},
    {"d.d_x_real", &DiscriminatorScores::d_x_real}, {"d.d_x_fake", &DiscriminatorScores::d_x_fake},
    {"d.d_x_on_y", &DiscriminatorScores::d_x_on_y},
};

double parse_double(const std::string& s, const std::filesystem::path& file, int line) {
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw InvalidArgument(file.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
}

}  // namespace

WeightArchive bundle_to_archive(const BatchBundle& b) {
    WeightArchive a;
    for (const auto& f : kImageFields) {
        const auto& images = b.*f.images;
        for (size_t i = 0; i < images.size(); ++i) {
            const ModelImage& img = images[i];
            // (3, h, w) row-major is channel planes in scan order, i.e. the transposed pixel matrix.
            Eigen::VectorXf v(img.data.size());
            for (int c = 0; c < 3; ++c) {
                v.segment(Eigen::Index{c} * img.data.cols(), img.data.cols()) = img.data.row(c).cast<float>().matrix();
            }
            a.entries.emplace_back(std::string(f.name) + "." + std::to_string(i),
                                   Tensor({3u, static_cast<std::uint32_t>(img.height),
                                           static_cast<std::uint32_t>(img.width)},
                                          std::move(v)));
        }
    }
    for (const auto& f : kScoreFields) {
        const auto& s = b.d.*f.scores;
        Eigen::VectorXf v(static_cast<Eigen::Index>(s.size()));
        for (size_t i = 0; i < s.size(); ++i) {
            v(static_cast<Eigen::Index>(i)) = static_cast<float>(s[i]);
        }
        a.entries.emplace_back(f.name, Tensor({static_cast<std::uint32_t>(s.size())}, std::move(v)));
    }
    return a;
}

BatchBundle bundle_from_archive(const WeightArchive& a) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : a.entries) {
        if (!by_name.emplace(name, &t).second) {
            throw WeightFormatError("duplicate tensor '" + name + "'");
        }
    }
    BatchBundle b;
    std::set<std::string> consumed;
    for (const auto& f : kImageFields) {
        auto& images = b.*f.images;
        for (size_t i = 0;; ++i) {
            const std::string name = std::string(f.name) + "." + std::to_string(i);
            const auto it = by_name.find(name);
            if (it == by_name.end()) {
                break;
            }
            const Tensor& t = *it->second;
            if (t.dims.size() != 3 || t.dims[0] != 3) {
                throw WeightFormatError("tensor '" + name + "' is not a (3, h, w) image");
            }
            ModelImage img{static_cast<int>(t.dims[2]), static_cast<int>(t.dims[1]), {}};
            const Eigen::Index n = Eigen::Index{img.width} * img.height;
            img.data.resize(3, n);
            for (int c = 0; c < 3; ++c) {
                img.data.row(c) = t.values.segment(c * n, n).cast<double>().transpose().array();
            }
            images.push_back(std::move(img));
            consumed.insert(name);
        }
    }
    for (const auto& f : kScoreFields) {
        const auto it = by_name.find(f.name);
        if (it == by_name.end()) {
            throw WeightFormatError(std::string("missing tensor '") + f.name + "'");
        }
        const Tensor& t = *it->second;
        if (t.dims.size() != 1) {
            throw WeightFormatError(std::string("tensor '") + f.name + "' must be rank 1");
        }
        auto& s = b.d.*f.scores;
        for (Eigen::Index i = 0; i < t.values.size(); ++i) {
            s.push_back(t.values(i));
        }
        consumed.insert(f.name);
    }
    if (consumed.size() != a.entries.size()) {
        for (const auto& [name, t] : a.entries) {
            if (!consumed.count(name)) {
                throw WeightFormatError("unexpected tensor '" + name + "'");
            }
        }
    }
    b.validate();
    return b;
}

std::string loss_log_row(const LossLogRow& r) {
    std::ostringstream os;
    os << r.epoch << ',' << loss_row(r.losses) << ',' << std::setprecision(12) << r.lr;
    return os.str();
}

void write_loss_log(const std::vector<LossLogRow>& rows, const std::filesystem::path& path) {
    std::ostringstream os;
    os << kLossLogHeader << '\n';
    for (const auto& r : rows) {
        os << loss_log_row(r) << '\n';
    }
    write_text_atomic(path, os.str());
}

std::vector<LossLogRow> read_loss_log(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) {
        throw InvalidArgument("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(f, line) || line != kLossLogHeader) {
        throw InvalidArgument(path.string() + ": expected header '" + kLossLogHeader + "'");
    }
    std::vector<LossLogRow> rows;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) {
            cells.push_back(c);
        }
        if (cells.size() != 10) {
            throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": expected 10 fields, got " +
                                  std::to_string(cells.size()));
        }
        LossLogRow r;
        const double epoch = parse_double(cells[0], path, lineno);
        r.epoch = static_cast<int>(epoch);
        if (r.epoch != epoch) {
            throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": epoch must be an integer");
        }
        double* fields[] = {&r.losses.adv_y, &r.losses.adv_x, &r.losses.boundary, &r.losses.cyc,
                            &r.losses.scyc,  &r.losses.dssim, &r.losses.id,       &r.losses.total};
        for (int i = 0; i < 8; ++i) {
            *fields[i] = parse_double(cells[1 + i], path, lineno);
        }
        r.lr = parse_double(cells[9], path, lineno);
        rows.push_back(r);
    }
    return rows;
}

double max_total_deviation(const std::vector<LossLogRow>& rows, const LossWeights& w) {
    double worst = 0;
    for (const auto& r : rows) {
        worst = std::max(worst, std::abs(r.losses.total - weighted_total(r.losses, w)));
    }
    return worst;
}

}  // namespace stainnorm
