#pragma once

#include <string>
#include <vector>

namespace moeamc {

// Full command-line pipeline. args excludes the program name. Returns the
// process exit code: 0 success, 1 validation/usage error, 2 I/O error,
// 3 selftest failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace moeamc
