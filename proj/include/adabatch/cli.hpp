#pragma once

#include <iosfwd>

namespace adabatch::cli {

// Exit codes
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;  // a verification verdict failed, or an internal error
inline constexpr int kConfigInvalid = 2;
inline constexpr int kDataError = 3;
inline constexpr int kNumericError = 4;

// Tables and CSV go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace adabatch::cli
