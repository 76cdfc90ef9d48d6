#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace crossfuse::cli {

enum ExitCode : int { kOk = 0, kConfig = 2, kIo = 3, kNumeric = 4, kGradcheck = 5 };

/// Runs one command. `args` excludes the program name. Results go to `out`,
/// diagnostics and logs to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace crossfuse::cli
