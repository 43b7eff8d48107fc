#pragma once

#include <string>
#include <vector>

namespace langtail::cli {

/// Runs `langtail <subcommand> ...` and returns the process exit code.
/// args[0] is the program name.
int run_command(const std::vector<std::string>& args);

}  // namespace langtail::cli
