// Command-line front end: ingest, train, eval and oracle subcommands.
#pragma once

#include <iosfwd>

namespace bess::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitInternal = 1;

/// Runs the CLI with explicit output streams so it can be driven in-process.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bess::cli
