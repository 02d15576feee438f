#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace blend::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kDivergence = 3,
    kIoError = 4,
};

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name. Artifacts default to $BLEND_OUT_DIR (or the working
/// directory) when no --out is given.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace blend::cli
