#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stainnorm/imaging.hpp"
#include "stainnorm/macenko.hpp"
#include "stainnorm/vahadane.hpp"
#include "stainnorm/weights.hpp"

namespace stainnorm {

struct PatchGrid {
    int width = 0;  ///< source image size
    int height = 0;
    int patch_size = 500;
    int stride = 500;
    std::array<std::uint8_t, 3> pad_color{255, 255, 255};

    static PatchGrid for_image(const RgbImage& img, int patch_size = 500, int stride = 500);

    int cols() const;
    int rows() const;
    int canvas_width() const;
    int canvas_height() const;
    void validate() const;
};

struct PatchRecord {
    int row = 0;
    int col = 0;
    int x = 0;  ///< origin on the padded canvas
    int y = 0;
    RgbImage image;
};

/// Row-major patches covering the padded canvas.
std::vector<PatchRecord> extract_patches(const RgbImage& img, const PatchGrid& g);

enum class Blend { overwrite, feather };

/// Reassembles a complete grid and crops the padding. Overlaps are resolved in row-major
/// order (overwrite) or by a linear ramp towards each patch centre (feather).
RgbImage stitch(const std::vector<PatchRecord>& patches, const PatchGrid& g, Blend blend = Blend::overwrite);

/// Mean absolute luma step (luma in [0, 1]) across patch seams minus the mean step elsewhere.
double seam_score(const RgbImage& img, const PatchGrid& g);

enum class Method { macenko, vahadane, saasn };
Method parse_method(const std::string& s);
std::string method_name(Method m);

enum class FailurePolicy { fail_fast, pass_through };

struct WsiOptions {
    int patch_size = 500;
    int stride = 500;
    int model_size = 256;  ///< patches are resized to this for saasn
    FailurePolicy policy = FailurePolicy::pass_through;
    int workers = 1;
    Blend blend = Blend::overwrite;
};

struct NormalizerSpec {
    Method method = Method::macenko;
    std::optional<RgbImage> target;          ///< classical methods
    const GeneratorWeights* weights = nullptr;  ///< saasn
    MacenkoParams macenko{};
    SnmfParams snmf{};
};

enum class PatchStatus { normalized, passed_through };
std::string status_name(PatchStatus s);

struct PatchOutcome {
    int row = 0;
    int col = 0;
    int x = 0;
    int y = 0;
    PatchStatus status = PatchStatus::normalized;
    std::string message;
};

struct WsiResult {
    RgbImage image;
    std::vector<PatchOutcome> patches;
};

/// Normalizes one patch-sized image (no tiling).
RgbImage normalize_patch(const RgbImage& patch, const NormalizerSpec& spec, const WsiOptions& opt = {});

/// Extract, normalize each patch on `opt.workers` threads, stitch. Output does not depend on
/// the worker count. Under fail_fast the first failing patch in row-major order is raised as
/// PatchFailed; under pass_through failing patches are copied unchanged.
WsiResult normalize_wsi(const RgbImage& img, const NormalizerSpec& spec, const WsiOptions& opt = {});

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception (by index) is
/// rethrown after all threads finish.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

// On-disk spill: `{slide}_{row}_{col}.png`, manifest.csv (row,col,x,y,status) and
// grid.csv (width,height,patch_size,stride).
void write_patches(const std::vector<PatchRecord>& patches, const PatchGrid& g, const std::filesystem::path& dir,
                   const std::string& slide, const std::vector<std::string>& status = {});

struct SpilledSlide {
    PatchGrid grid;
    std::vector<PatchRecord> patches;
};

SpilledSlide read_patches(const std::filesystem::path& dir, const std::string& slide);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace stainnorm
