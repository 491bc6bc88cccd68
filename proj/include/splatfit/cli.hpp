#pragma once

#include <string>
#include <vector>

namespace splatfit {

/// Runs one CLI command; argv excludes the program name. Returns the process
/// exit code: 0 success, 1 validation error, 2 numerical failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace splatfit
