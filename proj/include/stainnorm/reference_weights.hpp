#pragma once

#include <cstdint>

#include "stainnorm/weights.hpp"

namespace stainnorm {

/// Seeded random weights for `arch`, spectrally normalized, with random attention scales.
GeneratorWeights random_weights(const NetworkArch& arch, std::uint64_t seed, float attention_mu = 0.1f);

/// Architecture of identity_weights(): depth 2, 96 base channels, batch norm.
NetworkArch identity_arch();

/// Hand-built generator that approximately reproduces its input.
///
/// The first encoder block splits every 2 x 2 cell into colour/sub-pixel channels and expands
/// each value into ReLU hinge features; the output layer recombines the hinges into a
/// piecewise-linear inverse tanh and places them back, so tanh restores the input value.
/// Everything between is zero and every attention scale is 0.
GeneratorWeights identity_weights();

}  // namespace stainnorm
