#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mrp::cli {

enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kDataError = 3,
    kEstimationError = 4,
    kCheckFailure = 5,
};

// Runs one invocation (args excludes the program name). Messages go to
// `out` and `err`; the return value is the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mrp::cli
