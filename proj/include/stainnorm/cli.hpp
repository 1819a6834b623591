#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stainnorm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;      ///< bad flags, missing inputs, unreadable weights
inline constexpr int kExitProcessing = 2;  ///< failure while working on valid inputs

/// Entry point of the `stainnorm` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stainnorm
