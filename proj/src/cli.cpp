#include "stainnorm/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "stainnorm/losses.hpp"
#include "stainnorm/network.hpp"
#include "stainnorm/ssim.hpp"
#include "stainnorm/weights.hpp"
#include "stainnorm/wsi.hpp"

namespace fs = std::filesystem;

namespace stainnorm {

namespace {

// Raised for problems detected before any output is produced.
class ConfigError : public Error {
public:
    using Error::Error;
};

struct NormalizeArgs {
    std::string input;
    std::string method = "macenko";
    std::string target;
    std::string weights;
    std::string out;
    std::uint64_t seed = 0;
    int workers = 1;
    int patch_size = 500;
    int stride = 0;  ///< 0 means patch_size
    int model_size = 256;
    std::string policy = "pass-through";
};

struct EvaluateArgs {
    std::string dir_a;
    std::string dir_b;
    std::string method = "none";
    std::string direction = "a->b";
    std::string out;
    int window = 11;
    bool uniform = false;
    int ssim_stride = 1;
};

struct ExtractArgs {
    std::string input;
    std::string out;
    std::string slide;
    int patch_size = 500;
    int stride = 0;
};

struct StitchArgs {
    std::string input;
    std::string slide;
    std::string out;
    bool feather = false;
};

struct InferArgs {
    std::string input;
    std::string weights;
    std::string out;
};

struct LossArgs {
    std::string bundle;
    std::string log;
    std::string adv_mode = "ls";
    std::string out;
    LossWeights weights;
    double tolerance = 1e-4;
};

// Every *.png under `root` (or `root` itself), as sorted paths relative to the search base.
std::vector<fs::path> png_files(const fs::path& root) {
    std::vector<fs::path> out;
    if (fs::is_regular_file(root)) {
        out.push_back(root.filename());
        return out;
    }
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && e.path().extension() == ".png") {
            out.push_back(fs::relative(e.path(), root));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

GeneratorWeights load_weights_or_config_error(const std::string& path) {
    try {
        return load_weights(path);
    } catch (const Error& e) {
        throw ConfigError(std::string("--weights: ") + e.what());
    }
}

RgbImage read_image_or_config_error(const std::string& path, const char* flag) {
    try {
        return read_image(path);
    } catch (const Error& e) {
        throw ConfigError(std::string(flag) + ": " + e.what());
    }
}

void require_flag(const std::string& value, const std::string& flag, const std::string& why) {
    if (value.empty()) {
        throw ConfigError(flag + " is required " + why);
    }
}

int cmd_normalize(const NormalizeArgs& a, std::ostream& out) {
    const Method method = parse_method(a.method);
    NormalizerSpec spec;
    spec.method = method;
    spec.snmf.seed = a.seed;
    std::optional<GeneratorWeights> weights;
    if (method == Method::saasn) {
        require_flag(a.weights, "--weights", "for method saasn");
        weights = load_weights_or_config_error(a.weights);
        spec.weights = &*weights;
    } else {
        require_flag(a.target, "--target", "for method " + a.method);
        spec.target = read_image_or_config_error(a.target, "--target");
    }
    const fs::path root(a.input);
    const std::vector<fs::path> files = png_files(root);
    if (files.empty()) {
        throw ConfigError("no PNG files under " + a.input);
    }
    const fs::path base = fs::is_regular_file(root) ? root.parent_path() : root;
    const fs::path out_dir(a.out);

    WsiOptions opt;
    opt.patch_size = a.patch_size;
    opt.stride = a.stride > 0 ? a.stride : a.patch_size;
    opt.model_size = a.model_size;
    opt.policy = a.policy == "fail-fast" ? FailurePolicy::fail_fast : FailurePolicy::pass_through;
    // Spread workers over files when there are several, otherwise over the patches of one file.
    const bool per_file = files.size() > 1;
    opt.workers = per_file ? 1 : a.workers;

    struct FileResult {
        std::size_t patches = 0;
        std::size_t passed = 0;
    };
    std::vector<FileResult> results(files.size());
    parallel_for(files.size(), per_file ? a.workers : 1, [&](std::size_t i) {
        const RgbImage img = read_image(base / files[i]);
        WsiOptions local = opt;
        // Inputs smaller than a patch are processed whole rather than padded.
        const int side = std::max(img.width(), img.height());
        if (side < local.patch_size) {
            local.patch_size = side;
            local.stride = std::min(local.stride, side);
        }
        const WsiResult r = normalize_wsi(img, spec, local);
        const fs::path dst = out_dir / files[i];
        fs::create_directories(dst.parent_path());
        write_image(r.image, dst);
        results[i].patches = r.patches.size();
        results[i].passed = static_cast<std::size_t>(std::count_if(
            r.patches.begin(), r.patches.end(), [](const PatchOutcome& o) { return o.status != PatchStatus::normalized; }));
    });

    std::ostringstream manifest;
    manifest << "file,patches,normalized,passed_through\n";
    std::size_t passed = 0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        manifest << files[i].generic_string() << ',' << results[i].patches << ','
                 << results[i].patches - results[i].passed << ',' << results[i].passed << '\n';
        passed += results[i].passed;
    }
    write_text_atomic(out_dir / "manifest.csv", manifest.str());
    out << "normalized " << files.size() << " file(s) with " << method_name(method);
    if (passed > 0) {
        out << ", " << passed << " patch(es) passed through unchanged";
    }
    out << '\n';
    return kExitOk;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
    SsimParams p;
    p.window = a.window;
    p.weights = a.uniform ? WindowWeights::uniform : WindowWeights::gaussian;
    p.stride = a.ssim_stride;
    try {
        p.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    const auto list = [](const std::string& dir) {
        if (!fs::is_directory(dir)) {
            throw ConfigError("not a directory: " + dir);
        }
        return png_files(dir);
    };
    const std::vector<fs::path> fa = list(a.dir_a);
    const std::vector<fs::path> fb = list(a.dir_b);
    std::vector<fs::path> only_a, only_b;
    std::set_difference(fa.begin(), fa.end(), fb.begin(), fb.end(), std::back_inserter(only_a));
    std::set_difference(fb.begin(), fb.end(), fa.begin(), fa.end(), std::back_inserter(only_b));
    if (!only_a.empty() || !only_b.empty()) {
        std::ostringstream msg;
        msg << "unmatched filenames";
        for (const auto& f : only_a) {
            msg << "\n  only in " << a.dir_a << ": " << f.generic_string();
        }
        for (const auto& f : only_b) {
            msg << "\n  only in " << a.dir_b << ": " << f.generic_string();
        }
        throw ConfigError(msg.str());
    }
    if (fa.empty()) {
        throw ConfigError("no PNG files under " + a.dir_a);
    }
    std::vector<std::pair<RgbImage, RgbImage>> pairs;
    pairs.reserve(fa.size());
    for (const auto& f : fa) {
        pairs.emplace_back(read_image(fs::path(a.dir_a) / f), read_image(fs::path(a.dir_b) / f));
    }
    const MetricReport r = evaluate_dataset(pairs, p);
    const std::string text = std::string(kReportHeader) + "\n" + report_row(a.method, a.direction, r) + "\n";
    out << text;
    if (!a.out.empty()) {
        write_text_atomic(a.out, text);
    }
    return kExitOk;
}

int cmd_extract(const ExtractArgs& a, std::ostream& out) {
    const RgbImage img = read_image_or_config_error(a.input, "input");
    PatchGrid g;
    g.width = img.width();
    g.height = img.height();
    g.patch_size = a.patch_size;
    g.stride = a.stride > 0 ? a.stride : a.patch_size;
    try {
        g.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    const std::string slide = a.slide.empty() ? fs::path(a.input).stem().string() : a.slide;
    const auto patches = extract_patches(img, g);
    write_patches(patches, g, a.out, slide);
    out << "wrote " << patches.size() << " patch(es) (" << g.rows() << " rows x " << g.cols() << " cols)\n";
    return kExitOk;
}

int cmd_stitch(const StitchArgs& a, std::ostream& out) {
    const SpilledSlide s = read_patches(a.input, a.slide);
    const RgbImage img = stitch(s.patches, s.grid, a.feather ? Blend::feather : Blend::overwrite);
    write_image(img, a.out);
    out << "stitched " << s.patches.size() << " patch(es) into " << img.width() << "x" << img.height() << '\n';
    return kExitOk;
}

int cmd_infer(const InferArgs& a, std::ostream& out) {
    const GeneratorWeights w = load_weights_or_config_error(a.weights);
    const RgbImage img = read_image_or_config_error(a.input, "input");
    const RgbImage y = generator_forward(img, w);
    write_image(y, a.out);
    out << "wrote " << y.width() << "x" << y.height() << " image\n";
    return kExitOk;
}

int cmd_losses(const LossArgs& a, std::ostream& out) {
    if (a.bundle.empty() == a.log.empty()) {
        throw ConfigError("exactly one of --bundle and --log is required");
    }
    try {
        a.weights.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (!a.log.empty()) {
        const auto rows = read_loss_log(a.log);
        const double dev = max_total_deviation(rows, a.weights);
        out << "rows," << rows.size() << "\nmax_total_deviation," << std::setprecision(12) << dev << '\n';
        if (dev > a.tolerance) {
            throw InvalidArgument("logged totals disagree with the weighted sum by " + std::to_string(dev));
        }
        return kExitOk;
    }
    const AdversarialMode mode = parse_adversarial_mode(a.adv_mode);
    const BatchBundle bundle = bundle_from_archive(read_archive(a.bundle));
    const LossBreakdown b = total_objective(bundle, a.weights, {}, mode);
    const std::string text = std::string(kLossHeader) + "\n" + loss_row(b) + "\n";
    out << text;
    if (!a.out.empty()) {
        write_text_atomic(a.out, text);
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Stain normalization for H&E histopathology patches", "stainnorm"};
    app.set_config("--config", "", "TOML file whose keys mirror the command-line flags");
    app.require_subcommand(1);

    const auto positive = CLI::PositiveNumber;

    NormalizeArgs na;
    auto* normalize = app.add_subcommand("normalize", "Normalize a PNG file or a directory tree of PNGs");
    normalize->add_option("input", na.input, "PNG file or directory")->required()->check(CLI::ExistingPath);
    normalize->add_option("--method", na.method)->check(CLI::IsMember({"macenko", "vahadane", "saasn"}));
    normalize->add_option("--target", na.target, "Reference image for macenko and vahadane");
    normalize->add_option("--weights", na.weights, "Generator weights for saasn");
    normalize->add_option("--out", na.out, "Output directory")->required();
    normalize->add_option("--seed", na.seed, "Seed for SNMF pixel subsampling");
    normalize->add_option("--workers", na.workers)->check(positive);
    normalize->add_option("--patch-size", na.patch_size)->check(positive);
    normalize->add_option("--stride", na.stride, "Defaults to the patch size")->check(CLI::NonNegativeNumber);
    normalize->add_option("--model-size", na.model_size, "Side length fed to the generator")->check(positive);
    normalize->add_option("--policy", na.policy, "What to do with patches that fail")
        ->check(CLI::IsMember({"pass-through", "fail-fast"}));

    EvaluateArgs ea;
    auto* evaluate = app.add_subcommand("evaluate", "Grayscale SSIM between same-named images in two trees");
    evaluate->add_option("dir_a", ea.dir_a)->required();
    evaluate->add_option("dir_b", ea.dir_b)->required();
    evaluate->add_option("--method", ea.method, "Label for the report row");
    evaluate->add_option("--direction", ea.direction, "Label for the report row");
    evaluate->add_option("--out", ea.out, "Also write the report to this CSV");
    evaluate->add_option("--window", ea.window)->check(positive);
    evaluate->add_flag("--uniform", ea.uniform, "Uniform instead of Gaussian window");
    evaluate->add_option("--ssim-stride", ea.ssim_stride)->check(positive);

    ExtractArgs xa;
    auto* extract = app.add_subcommand("extract", "Split an image into patches on disk");
    extract->add_option("input", xa.input)->required();
    extract->add_option("--out", xa.out)->required();
    extract->add_option("--slide", xa.slide, "Patch name prefix, defaults to the input stem");
    extract->add_option("--patch-size", xa.patch_size)->check(positive);
    extract->add_option("--stride", xa.stride)->check(CLI::NonNegativeNumber);

    StitchArgs sa;
    auto* stitch_cmd = app.add_subcommand("stitch", "Reassemble patches written by extract");
    stitch_cmd->add_option("input", sa.input)->required()->check(CLI::ExistingDirectory);
    stitch_cmd->add_option("--slide", sa.slide)->required();
    stitch_cmd->add_option("--out", sa.out)->required();
    stitch_cmd->add_flag("--feather", sa.feather, "Blend overlapping patches");

    InferArgs ia;
    auto* infer = app.add_subcommand("infer", "Run the generator on one image");
    infer->add_option("input", ia.input)->required();
    infer->add_option("--weights", ia.weights)->required();
    infer->add_option("--out", ia.out)->required();

    LossArgs la;
    auto* losses = app.add_subcommand("losses", "Evaluate the training objective on an exported batch");
    losses->add_option("--bundle", la.bundle, "Batch archive written by the trainer");
    losses->add_option("--log", la.log, "Per-epoch losses.csv to check against the weighted sum");
    losses->add_option("--adv-mode", la.adv_mode)->check(CLI::IsMember({"ce", "ls"}));
    losses->add_option("--out", la.out);
    losses->add_option("--alpha", la.weights.alpha);
    losses->add_option("--beta", la.weights.beta);
    losses->add_option("--gamma", la.weights.gamma);
    losses->add_option("--delta", la.weights.delta);
    losses->add_option("--tolerance", la.tolerance);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        if (normalize->parsed()) {
            return cmd_normalize(na, out);
        }
        if (evaluate->parsed()) {
            return cmd_evaluate(ea, out);
        }
        if (extract->parsed()) {
            return cmd_extract(xa, out);
        }
        if (stitch_cmd->parsed()) {
            return cmd_stitch(sa, out);
        }
        if (infer->parsed()) {
            return cmd_infer(ia, out);
        }
        return cmd_losses(la, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitProcessing;
    }
}

}  // namespace stainnorm
