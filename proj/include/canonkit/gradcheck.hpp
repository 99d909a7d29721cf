#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace canonkit {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

/// Central-difference checks (h = 1e-3, tolerance 1e-4) covering every
/// differentiable op and the canonicalization losses. The hard-selection case
/// compares its analytic gradients against differences of the soft surrogate.
/// `fault` names one case whose analytic gradients are skewed on purpose, so
/// tests can prove a broken gradient is caught.
std::vector<GradCheckResult> run_gradchecks(uint64_t seed, const std::string& fault = "");

}  // namespace canonkit
