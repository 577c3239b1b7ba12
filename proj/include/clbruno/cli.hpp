#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

namespace clbruno {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitDivergence = 4,
  kExitDimension = 5,
  kExitContract = 6,
  kExitLabelSpace = 7,
};

/// Exit status for an exception escaping a command.
int exit_code_for(const std::exception& e);

/// Runs one command. `args` excludes the program name. Results go to `out`
/// as CSV or key=value lines, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace clbruno
