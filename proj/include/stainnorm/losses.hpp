#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stainnorm/imaging.hpp"
#include "stainnorm/ssim.hpp"
#include "stainnorm/weights.hpp"

namespace stainnorm {

enum class AdversarialMode { cross_entropy, least_squares };

AdversarialMode parse_adversarial_mode(const std::string& s);  ///< "ce" or "ls"

struct LossWeights {
    double alpha = 10;   ///< cycle
    double beta = 10;    ///< structural cycle
    double gamma = 10;   ///< mapped dssim
    double delta = 0.1;  ///< identity

    void validate() const;
};

/// Cross-entropy: E[log D(real)] + E[log(1 - D(fake))] on probabilities.
/// Least-squares: E[(D(real) - 1)^2] + E[D(fake)^2] on raw outputs.
double adv_loss_y(std::span<const double> d_real, std::span<const double> d_fake, AdversarialMode mode);

/// Penalty for D_X accepting real target images: E[log(1 - D_X(y))] or E[D_X(y)^2].
double boundary_term(std::span<const double> d_x_on_real_y, AdversarialMode mode);

/// adv_loss_y for D_X plus boundary_term.
double adv_loss_x_with_boundary(std::span<const double> d_real, std::span<const double> d_fake,
                                std::span<const double> d_x_on_real_y, AdversarialMode mode);

/// Least-squares generator objective E[(D(fake) - 1)^2].
double ls_generator_term(std::span<const double> d_fake);

/// Batch mean of per-image mean absolute difference, both directions summed.
double cycle_loss(std::span<const ModelImage> x, std::span<const ModelImage> cycled_x, std::span<const ModelImage> y,
                  std::span<const ModelImage> cycled_y);

/// Sum over both directions of the batch-mean grayscale DSSIM.
double structural_cycle_loss(std::span<const ModelImage> x, std::span<const ModelImage> cycled_x,
                             std::span<const ModelImage> y, std::span<const ModelImage> cycled_y,
                             const SsimParams& p = {});

double dssim_mapped_loss(std::span<const ModelImage> x, std::span<const ModelImage> fake_y,
                         std::span<const ModelImage> y, std::span<const ModelImage> fake_x, const SsimParams& p = {});

double identity_loss(std::span<const ModelImage> y, std::span<const ModelImage> id_y, std::span<const ModelImage> x,
                     std::span<const ModelImage> id_x);

/// Discriminator outputs for one batch (per-image map means).
struct DiscriminatorScores {
    std::vector<double> d_y_real;  ///< D_Y(y)
    std::vector<double> d_y_fake;  ///< D_Y(G_YX(x))
    std::vector<double> d_x_real;  ///< D_X(x)
    std::vector<double> d_x_fake;  ///< D_X(G_XY(y))
    std::vector<double> d_x_on_y;  ///< D_X(y)
};

struct BatchBundle {
    std::vector<ModelImage> x, y;
    std::vector<ModelImage> fake_y;    ///< G_YX(x)
    std::vector<ModelImage> fake_x;    ///< G_XY(y)
    std::vector<ModelImage> cycled_x;  ///< G_XY(G_YX(x))
    std::vector<ModelImage> cycled_y;  ///< G_YX(G_XY(y))
    std::vector<ModelImage> id_x;      ///< G_XY(x)
    std::vector<ModelImage> id_y;      ///< G_YX(y)
    DiscriminatorScores d;

    void validate() const;
};

struct LossBreakdown {
    double adv_y = 0;
    double adv_x = 0;     ///< includes the boundary term
    double boundary = 0;  ///< informational, already inside adv_x
    double cyc = 0;
    double scyc = 0;
    double dssim = 0;
    double id = 0;
    double total = 0;
};

/// adv_y + adv_x + alpha cyc + beta scyc + gamma dssim + delta id, summed left to right.
double weighted_total(const LossBreakdown& b, const LossWeights& w);

LossBreakdown total_objective(const BatchBundle& bundle, const LossWeights& w = {}, const SsimParams& p = {},
                              AdversarialMode mode = AdversarialMode::least_squares);

inline constexpr const char* kLossHeader = "adv_y,adv_x,boundary,cyc,scyc,dssim,id,total";
std::string loss_row(const LossBreakdown& b);

/// Bundle exchange with the trainer, stored in the weight archive container. Images are
/// (3, h, w) tensors named `x.0`, `fake_y.3`, ... in model space; scores are rank-1 tensors
/// named `d.d_y_real` and so on.
WeightArchive bundle_to_archive(const BatchBundle& b);
BatchBundle bundle_from_archive(const WeightArchive& a);

/// One line of the trainer's per-epoch log.
struct LossLogRow {
    int epoch = 0;
    LossBreakdown losses;
    double lr = 0;
};

inline constexpr const char* kLossLogHeader = "epoch,adv_y,adv_x,boundary,cyc,scyc,dssim,id,total,lr";
std::string loss_log_row(const LossLogRow& r);
void write_loss_log(const std::vector<LossLogRow>& rows, const std::filesystem::path& path);
std::vector<LossLogRow> read_loss_log(const std::filesystem::path& path);

/// Largest |total - weighted_total(components)| over the log.
double max_total_deviation(const std::vector<LossLogRow>& rows, const LossWeights& w);

}  // namespace stainnorm
