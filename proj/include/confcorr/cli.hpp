#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace confcorr {

enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 1,
  kExitUsage = 2,
  kExitIo = 3,
};

/// Runs one invocation. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace confcorr
