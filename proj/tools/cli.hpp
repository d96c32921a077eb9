#pragma once

#include <string>
#include <vector>

namespace speedmode::cli {

/// Exit codes: 0 success, 1 usage error, 2 data error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one command line (args[0] is the program name).
int run(const std::vector<std::string>& args);

}  // namespace speedmode::cli
