#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gsec::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kDataError = 3,
    kConfigConflict = 4,
};

/// Entry point of the gsecnet tool. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace gsec::cli
