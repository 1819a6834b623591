#include "stainnorm/wsi.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "label_errors.hpp"
#include "stainnorm/network.hpp"
#include "stainnorm/optical_density.hpp"

namespace stainnorm {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        out.push_back(cell);
    }
    return out;
}

int to_int(const std::string& s, const std::filesystem::path& file) {
    try {
        size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used == s.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw ImageIoError(file.string() + ": bad integer '" + s + "'");
}

}  // namespace

PatchGrid PatchGrid::for_image(const RgbImage& img, int patch_size, int stride) {
    PatchGrid g;
    g.width = img.width();
    g.height = img.height();
    g.patch_size = patch_size;
    g.stride = stride;
    g.validate();
    return g;
}

int PatchGrid::cols() const { return ceil_div(width, stride); }
int PatchGrid::rows() const { return ceil_div(height, stride); }
int PatchGrid::canvas_width() const { return (cols() - 1) * stride + patch_size; }
int PatchGrid::canvas_height() const { return (rows() - 1) * stride + patch_size; }

void PatchGrid::validate() const {
    if (width <= 0 || height <= 0) {
        throw InvalidArgument("patch grid needs a non-empty source image");
    }
    if (patch_size <= 0) {
        throw InvalidArgument("patch_size must be positive");
    }
    if (stride <= 0 || stride > patch_size) {
        throw InvalidArgument("stride must lie in (0, patch_size]");
    }
}

std::vector<PatchRecord> extract_patches(const RgbImage& img, const PatchGrid& g) {
    g.validate();
    if (img.width() != g.width || img.height() != g.height) {
        throw DimensionMismatch("image is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                                ", grid expects " + std::to_string(g.width) + "x" + std::to_string(g.height));
    }
    const int n = g.patch_size;
    std::vector<PatchRecord> out;
    out.reserve(static_cast<size_t>(g.rows()) * g.cols());
    for (int r = 0; r < g.rows(); ++r) {
        for (int c = 0; c < g.cols(); ++c) {
            PatchRecord p{r, c, c * g.stride, r * g.stride, RgbImage(n, n)};
            for (int y = 0; y < n; ++y) {
                const int sy = p.y + y;
                for (int x = 0; x < n; ++x) {
                    const int sx = p.x + x;
                    const bool inside = sx < g.width && sy < g.height;
                    for (int ch = 0; ch < 3; ++ch) {
                        p.image.at(x, y, ch) = inside ? img.at(sx, sy, ch) : g.pad_color[ch];
                    }
                }
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

RgbImage stitch(const std::vector<PatchRecord>& patches, const PatchGrid& g, Blend blend) {
    g.validate();
    const int rows = g.rows();
    const int cols = g.cols();
    std::vector<const PatchRecord*> slot(static_cast<size_t>(rows) * cols, nullptr);
    for (const PatchRecord& p : patches) {
        if (p.row < 0 || p.row >= rows || p.col < 0 || p.col >= cols) {
            throw InvalidArgument("patch (row " + std::to_string(p.row) + ", col " + std::to_string(p.col) +
                                  ") lies outside the " + std::to_string(rows) + "x" + std::to_string(cols) + " grid");
        }
        if (p.image.width() != g.patch_size || p.image.height() != g.patch_size) {
            throw DimensionMismatch("patch (row " + std::to_string(p.row) + ", col " + std::to_string(p.col) +
                                    ") is not " + std::to_string(g.patch_size) + " pixels square");
        }
        if (p.x != p.col * g.stride || p.y != p.row * g.stride) {
            throw InvalidArgument("patch (row " + std::to_string(p.row) + ", col " + std::to_string(p.col) +
                                  ") has origin inconsistent with the grid");
        }
        auto& s = slot[static_cast<size_t>(p.row) * cols + p.col];
        if (s != nullptr) {
            throw InvalidArgument("duplicate patch (row " + std::to_string(p.row) + ", col " + std::to_string(p.col) +
                                  ")");
        }
        s = &p;
    }
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (slot[static_cast<size_t>(r) * cols + c] == nullptr) {
                throw InvalidArgument("missing patch (row " + std::to_string(r) + ", col " + std::to_string(c) + ")");
            }
        }
    }

    RgbImage out(g.width, g.height);
    const int n = g.patch_size;
    if (blend == Blend::overwrite || g.stride == n) {
        for (const PatchRecord* p : slot) {
            const int w = std::min(n, g.width - p->x);
            const int h = std::min(n, g.height - p->y);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    for (int ch = 0; ch < 3; ++ch) {
                        out.at(p->x + x, p->y + y, ch) = p->image.at(x, y, ch);
                    }
                }
            }
        }
        return out;
    }

    // Tent weight, strictly positive so canvas corners stay covered.
    const auto ramp = [n](int i) { return std::min(i + 1, n - i) / static_cast<double>(n); };
    Eigen::ArrayXXd acc = Eigen::ArrayXXd::Zero(3, Eigen::Index{g.width} * g.height);
    Eigen::ArrayXd wsum = Eigen::ArrayXd::Zero(Eigen::Index{g.width} * g.height);
    for (const PatchRecord* p : slot) {
        const int w = std::min(n, g.width - p->x);
        const int h = std::min(n, g.height - p->y);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double wt = ramp(x) * ramp(y);
                const Eigen::Index k = Eigen::Index{p->y + y} * g.width + p->x + x;
                for (int ch = 0; ch < 3; ++ch) {
                    acc(ch, k) += wt * p->image.at(x, y, ch);
                }
                wsum(k) += wt;
            }
        }
    }
    for (Eigen::Index k = 0; k < wsum.size(); ++k) {
        for (int ch = 0; ch < 3; ++ch) {
            out.pixels()(k, ch) = static_cast<std::uint8_t>(std::clamp(std::round(acc(ch, k) / wsum(k)), 0.0, 255.0));
        }
    }
    return out;
}

double seam_score(const RgbImage& img, const PatchGrid& g) {
    g.validate();
    if (img.width() != g.width || img.height() != g.height) {
        throw DimensionMismatch("seam_score: image does not match the grid");
    }
    const GrayImage gray = to_grayscale(img);
    double seam_sum = 0, inner_sum = 0;
    long seam_n = 0, inner_n = 0;
    // Horizontal neighbour pairs (x, x+1) and vertical pairs (y, y+1); a pair straddles a
    // seam when x+1 is a multiple of the stride.
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x + 1 < g.width; ++x) {
            const double d = std::abs(gray(y, x + 1) - gray(y, x));
            if ((x + 1) % g.stride == 0) {
                seam_sum += d;
                ++seam_n;
            } else {
                inner_sum += d;
                ++inner_n;
            }
        }
    }
    for (int y = 0; y + 1 < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            const double d = std::abs(gray(y + 1, x) - gray(y, x));
            if ((y + 1) % g.stride == 0) {
                seam_sum += d;
                ++seam_n;
            } else {
                inner_sum += d;
                ++inner_n;
            }
        }
    }
    if (seam_n == 0 || inner_n == 0) {
        return 0.0;
    }
    return seam_sum / seam_n - inner_sum / inner_n;
}

Method parse_method(const std::string& s) {
    if (s == "macenko") {
        return Method::macenko;
    }
    if (s == "vahadane") {
        return Method::vahadane;
    }
    if (s == "saasn") {
        return Method::saasn;
    }
    throw InvalidArgument("unknown method '" + s + "' (expected macenko, vahadane or saasn)");
}

std::string method_name(Method m) {
    switch (m) {
        case Method::macenko:
            return "macenko";
        case Method::vahadane:
            return "vahadane";
        case Method::saasn:
            return "saasn";
    }
    return "?";
}

std::string status_name(PatchStatus s) { return s == PatchStatus::normalized ? "normalized" : "passed_through"; }

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (threads <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back(work);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

namespace {

// Target stains are estimated once per slide; every patch is mapped onto the same reference.
struct PreparedNormalizer {
    const NormalizerSpec& spec;
    StainMatrix target_stains;

    PreparedNormalizer(const NormalizerSpec& s) : spec(s) {
        if (spec.method == Method::saasn) {
            if (spec.weights == nullptr) {
                throw InvalidArgument("saasn normalization needs generator weights");
            }
            return;
        }
        if (!spec.target) {
            throw InvalidArgument(method_name(spec.method) + " normalization needs a target image");
        }
        target_stains = detail::labelled("target", [&] {
            return spec.method == Method::macenko ? estimate_stains_macenko(*spec.target, spec.macenko)
                                                  : estimate_stains_snmf(*spec.target, spec.snmf);
        });
    }

    RgbImage operator()(const RgbImage& patch, const WsiOptions& opt) const {
        if (spec.method == Method::saasn) {
            const int side = opt.model_size;
            const bool scale = patch.width() != side || patch.height() != side;
            const RgbImage in = scale ? resize(patch, side, side) : patch;
            const RgbImage out = generator_forward(in, *spec.weights);
            return scale ? resize(out, patch.width(), patch.height()) : out;
        }
        const bool mac = spec.method == Method::macenko;
        const StainMatrix src = detail::labelled("source", [&] {
            return mac ? estimate_stains_macenko(patch, spec.macenko) : estimate_stains_snmf(patch, spec.snmf);
        });
        return mac ? transfer_stains(patch, src, *spec.target, target_stains, spec.macenko.concentration_percentile,
                                     spec.macenko.od)
                   : transfer_stains(patch, src, *spec.target, target_stains, spec.snmf.concentration_percentile,
                                     spec.snmf.od);
    }
};

}  // namespace

RgbImage normalize_patch(const RgbImage& patch, const NormalizerSpec& spec, const WsiOptions& opt) {
    return PreparedNormalizer(spec)(patch, opt);
}

WsiResult normalize_wsi(const RgbImage& img, const NormalizerSpec& spec, const WsiOptions& opt) {
    if (opt.model_size <= 0) {
        throw InvalidArgument("model_size must be positive");
    }
    const PatchGrid g = PatchGrid::for_image(img, opt.patch_size, opt.stride);
    const PreparedNormalizer norm(spec);
    std::vector<PatchRecord> patches = extract_patches(img, g);

    WsiResult result{RgbImage(1, 1), std::vector<PatchOutcome>(patches.size())};
    parallel_for(patches.size(), opt.workers, [&](std::size_t i) {
        PatchRecord& p = patches[i];
        PatchOutcome& o = result.patches[i];
        o = PatchOutcome{p.row, p.col, p.x, p.y, PatchStatus::normalized, {}};
        try {
            p.image = norm(p.image, opt);
        } catch (const Error& e) {
            o.status = PatchStatus::passed_through;
            o.message = e.what();
        }
    });
    if (opt.policy == FailurePolicy::fail_fast) {
        for (const PatchOutcome& o : result.patches) {
            if (o.status != PatchStatus::normalized) {
                throw PatchFailed(o.row, o.col, o.message);
            }
        }
    }
    result.image = stitch(patches, g, opt.blend);
    return result;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f << text;
        f.flush();
        if (!f) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw ImageIoError("cannot write " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw ImageIoError("cannot write " + path.string());
    }
}

void write_patches(const std::vector<PatchRecord>& patches, const PatchGrid& g, const std::filesystem::path& dir,
                   const std::string& slide, const std::vector<std::string>& status) {
    g.validate();
    if (!status.empty() && status.size() != patches.size()) {
        throw InvalidArgument("status list does not match the patch list");
    }
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    manifest << "row,col,x,y,status\n";
    for (size_t i = 0; i < patches.size(); ++i) {
        const PatchRecord& p = patches[i];
        write_image(p.image, dir / (slide + "_" + std::to_string(p.row) + "_" + std::to_string(p.col) + ".png"));
        manifest << p.row << ',' << p.col << ',' << p.x << ',' << p.y << ',' << (status.empty() ? "ok" : status[i])
                 << '\n';
    }
    std::ostringstream grid;
    grid << "width,height,patch_size,stride\n" << g.width << ',' << g.height << ',' << g.patch_size << ',' << g.stride
         << '\n';
    write_text_atomic(dir / "grid.csv", grid.str());
    write_text_atomic(dir / "manifest.csv", manifest.str());
}

SpilledSlide read_patches(const std::filesystem::path& dir, const std::string& slide) {
    const auto read_rows = [](const std::filesystem::path& file, const std::string& header) {
        std::ifstream f(file);
        if (!f) {
            throw ImageIoError("cannot open " + file.string());
        }
        std::string line;
        if (!std::getline(f, line) || line != header) {
            throw ImageIoError(file.string() + ": expected header '" + header + "'");
        }
        std::vector<std::vector<std::string>> rows;
        while (std::getline(f, line)) {
            if (!line.empty()) {
                rows.push_back(split_csv(line));
            }
        }
        return rows;
    };

    const auto gfile = dir / "grid.csv";
    const auto grows = read_rows(gfile, "width,height,patch_size,stride");
    if (grows.size() != 1 || grows[0].size() != 4) {
        throw ImageIoError(gfile.string() + ": expected one row of four fields");
    }
    SpilledSlide out;
    out.grid.width = to_int(grows[0][0], gfile);
    out.grid.height = to_int(grows[0][1], gfile);
    out.grid.patch_size = to_int(grows[0][2], gfile);
    out.grid.stride = to_int(grows[0][3], gfile);
    out.grid.validate();

    const auto mfile = dir / "manifest.csv";
    for (const auto& r : read_rows(mfile, "row,col,x,y,status")) {
        if (r.size() != 5) {
            throw ImageIoError(mfile.string() + ": expected five fields per row");
        }
        PatchRecord p{to_int(r[0], mfile), to_int(r[1], mfile), to_int(r[2], mfile), to_int(r[3], mfile),
                      RgbImage(1, 1)};
        p.image = read_image(dir / (slide + "_" + r[0] + "_" + r[1] + ".png"));
        out.patches.push_back(std::move(p));
    }
    return out;
}

}  // namespace stainnorm
