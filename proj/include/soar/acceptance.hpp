// SPDX-License-Identifier: Apache-2.0
//
// Self-test suite: each criterion measures an error against a tolerance and
// passes iff error <= tolerance (and, where set, within its time budget).

#pragma once

#include <string>
#include <vector>

namespace soar::acceptance {

struct CriterionResult {
  int id{0};
  std::string name;
  bool passed{false};
  double error{0};
  double tolerance{0};
  double seconds{0};
  std::string detail;
};

struct Options {
  /// Criterion whose tolerance is forced to -1 so that it fails (0 = none).
  int inject_failure{0};
  /// Restrict the run to these ids (empty = all).
  std::vector<int> only;
};

inline constexpr int kCriterionCount = 12;
inline constexpr double kSuiteBudgetSeconds = 60.0;

std::vector<CriterionResult> run(const Options& options = {});
/// Criterion 12 only, expanded per sampled suite.
std::vector<CriterionResult> run_info(const Options& options = {});

/// "PASS  3 selective reduction  error=... tol=... (0.01 s)  detail"
std::string format(const CriterionResult& result);

}  // namespace soar::acceptance
