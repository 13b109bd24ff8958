#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vana/gradcheck.hpp"

namespace vana {

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  int cases = 20;
  double tolerance = 1e-5;
  double eps = 1e-5;
  // Perturbs one analytic gradient so the suite must fail; a negative
  // control for the reporting and exit-code paths.
  bool sabotage = false;
};

struct OpGradReport {
  std::string op;
  GradReport report;
};

// Certifies every analytic VJP (tensor, attention, embed operators) against
// central finite differences on randomized instances with bounded logits.
// One merged worst-case report per operation.
std::vector<OpGradReport> run_gradcheck_suite(const GradSuiteOptions& options);

bool all_passed(const std::vector<OpGradReport>& reports);

}  // namespace vana
