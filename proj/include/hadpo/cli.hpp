#pragma once

#include <ostream>

namespace hadpo::cli {

// Stable exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntime = 1;
inline constexpr int kUsage = 2;
inline constexpr int kDivergence = 3;
inline constexpr int kLeakage = 4;

/// Entry point behind the `hadpo` binary. Never throws; every failure maps to
/// one of the exit codes above.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hadpo::cli
