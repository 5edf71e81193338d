#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace purekit::cli {

// Process exit codes. Listed in `purekit --help`.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,  // unexpected failure
  kUsage = 2,     // bad flags, unknown config keys, invalid values
  kIo = 3,        // missing input, failed write
  kFormat = 4,    // malformed or truncated file
  kShape = 5,     // artifacts with incompatible shapes
  kNumeric = 6,   // NaN/Inf or a diverging run
};

// Runs one command line (args excludes the program name). The one-line
// summary goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace purekit::cli
