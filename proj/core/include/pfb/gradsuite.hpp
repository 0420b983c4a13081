#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pfb::grad {

// One analytic-vs-finite-difference comparison. rel_err is the max-norm of
// the gradient difference over the max-norm of either gradient.
struct CheckResult {
  std::string name;
  double rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central finite-difference checks covering every differentiable primitive,
// each parameterized block (fully connected stack, recurrent cell, Gaussian
// heads, potential), the second-order gradient-energy term, and the full
// window losses on a toy model.
std::vector<CheckResult> run_gradient_suite(std::uint64_t seed);

// Only the second-order check: the parameter gradient of the mean squared
// state-gradient of the potential, against finite differences.
CheckResult run_grad_of_grad_check(std::uint64_t seed);

bool all_pass(const std::vector<CheckResult>& results);
std::string format_results(const std::vector<CheckResult>& results);

}  // namespace pfb::grad
