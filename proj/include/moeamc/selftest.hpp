#pragma once

#include <string>
#include <vector>

namespace moeamc {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Runs every analytic example the modules promise: exact values computed by
// independent oracles, double precision. Used by both `moeamc selftest` and
// the acceptance suite.
std::vector<CheckResult> run_selftest();

}  // namespace moeamc
