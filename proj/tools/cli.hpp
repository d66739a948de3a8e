#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace vlmerge::cli {

// Exit codes: 0 success, 1 failure, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs one command line (without the program name). Results go to `out`,
// logs and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vlmerge::cli
