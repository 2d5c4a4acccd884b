#pragma once

#include <iosfwd>

namespace bilinsim {

// Exit codes of the `bilinsim` executable.
enum ExitCode : int {
  kExitOk = 0,
  kExitIo = 1,
  kExitConfig = 2,        // bad arguments, config or CSV
  kExitDivergence = 3,
  kExitIncompatible = 4,  // checkpoints/models whose shapes do not match
  kExitUnsupported = 5,   // metric does not apply to the stack (e.g. Gaussian on a deep stack)
  kExitDegenerate = 6,    // zero norm, e.g. a diff of two identical models
  kExitGuard = 7,         // oracle size guard exceeded
  kExitOracleFail = 8,    // oracle check ran and disagreed with the closed form
};

// Parses argv and runs one subcommand. Data goes to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bilinsim
