#pragma once

// Self-check suites behind the grad-check CLI subcommand and the acceptance
// tests: finite-difference verification of every differentiable op and
// oracle checks of the selective scan against a brute-force recurrence.

#include <string>
#include <vector>

namespace duet::diagnostics {

struct CheckResult {
  std::string name;
  double value = 0.0;      // max error observed across seeds
  double threshold = 0.0;  // pass iff value < threshold
  bool pass = false;
};

// Finite-difference gradient checks, `seeds` random instances per op.
std::vector<CheckResult> gradient_suite(int seeds);

// selective_scan vs. an independent unrolled recurrence, plus chunked
// equivalence for chunk in {1, 3, 7, L} on random instances with L <= 64.
std::vector<CheckResult> scan_oracle_suite(int seeds);

bool all_pass(const std::vector<CheckResult>& results);

}  // namespace duet::diagnostics
