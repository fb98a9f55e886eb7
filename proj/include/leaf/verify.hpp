#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace leaf {

struct CheckResult {
  std::string name;
  double observed = 0.0;
  double bound = 0.0;
  bool pass = false;
};

struct SuiteResult {
  std::vector<CheckResult> checks;
  bool pass = true;
  double seconds = 0.0;

  void add(const std::string& name, double observed, double bound, bool ok) {
    checks.push_back({name, observed, bound, ok});
    pass = pass && ok;
  }
};

/// Finite-difference verification of every differentiable op plus the
/// supervised and consistency losses composed through both expert-fusion
/// levels, against central differences in float64.
SuiteResult gradcheck_suite(std::uint64_t seed = 12345);

/// Brute-force equivalence suites: the cumulative partition against an
/// independent oracle, and the smooth consistency loss against direct
/// summation, its hinge bounds, and its derivative signs.
SuiteResult oracle_suite(std::uint64_t seed = 12345);

}  // namespace leaf
