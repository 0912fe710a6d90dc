#pragma once

#include <ostream>

namespace kllab {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNegative = 3;  // no finite answer, or an acceptance check failed

// Entry point of the `kllab` command. Never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kllab
