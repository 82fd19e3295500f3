#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gncd::cli {

enum ExitCode { kOk = 0, kRuntimeError = 1, kUsageError = 2 };

// Runs one command line (args excludes the program name). Output root
// defaults to $GNCD_OUTPUT_ROOT, then "runs".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gncd::cli
