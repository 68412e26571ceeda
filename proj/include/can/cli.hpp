#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace can {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitData = 3,
  kExitDiverged = 4,
};

/// Runs one `can` command line (args excludes the program name) and maps
/// failures to exit codes.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace can
