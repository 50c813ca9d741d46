#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "msptr/tape.hpp"

namespace msptr {

// Evaluates the scalar loss at `params`. When `grads` is non-null the callee
// also accumulates analytic gradients into it (already zeroed by the caller).
using LossFunction = std::function<double(const ParameterSet& params, Gradients* grads)>;

struct GradCheckOptions {
  double eps = 1e-3;
  // Five-point stencil (error O(eps^4)) instead of the two-point one
  // (error O(eps^2)). Needed when small gradients must be resolved against
  // the 1e-8 denominator floor.
  bool fourth_order = false;
  // Entries checked per parameter tensor; tensors at or below this size are checked exhaustively.
  std::size_t max_entries_per_tensor = 10000;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

// Compares analytic gradients against 64-bit central differences:
// max |analytic - cd| / max(|analytic|, |cd|, 1e-8). params is perturbed in
// place and restored before returning. Throws on a non-finite loss.
GradCheckResult grad_check(const LossFunction& loss, ParameterSet& params, const GradCheckOptions& options = {});

}  // namespace msptr
