#pragma once

#include <string>

#include "stainnorm/errors.hpp"

namespace stainnorm::detail {

/// Runs `fn`, re-raising estimation errors with the name of the image that caused them.
template <typename Fn>
auto labelled(const std::string& which, Fn&& fn) {
    try {
        return fn();
    } catch (const NoTissue& e) {
        throw NoTissue(which + " image: " + e.what());
    } catch (const DegenerateStains& e) {
        throw DegenerateStains(which + " image: " + e.what());
    } catch (const NonConvergence& e) {
        throw NonConvergence(which + " image: " + e.what());
    }
}

}  // namespace stainnorm::detail
