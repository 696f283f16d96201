#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace coal::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kGuard = 3, kNumerical = 4 };

/// Parses argv-style arguments (args[0] is the program name) and runs one subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace coal::cli
