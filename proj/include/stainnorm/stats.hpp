#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "stainnorm/errors.hpp"

namespace stainnorm {

/// Pairwise (cascade) summation. The split points depend only on the length, so the result
/// is independent of how callers chunk the work.
template <typename Scalar>
Scalar pairwise_sum(std::span<const Scalar> values) {
    constexpr std::size_t kLeaf = 8;
    if (values.size() <= kLeaf) {
        Scalar acc = 0;
        for (Scalar v : values) {
            acc += v;
        }
        return acc;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

/// Percentile with linear interpolation between closest ranks, q in [0, 100].
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw InvalidArgument("percentile of an empty sample");
    }
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace stainnorm
