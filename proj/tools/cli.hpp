#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace causalmon {

/// Exit statuses of the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 1;
inline constexpr int kExitAlarm = 2;

/// Runs the `causalmon` command line with `args` (program name excluded).
/// Standard input of `detect` comes from `in`; results go to `out` and
/// diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace causalmon
