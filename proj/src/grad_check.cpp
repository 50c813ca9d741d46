#include "msptr/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace msptr {

namespace {

double finite_loss(const LossFunction& loss, const ParameterSet& params) {
  const double value = loss(params, nullptr);
  if (!std::isfinite(value)) throw std::runtime_error("grad_check: loss is not finite");
  return value;
}

}  // namespace

GradCheckResult grad_check(const LossFunction& loss, ParameterSet& params, const GradCheckOptions& options) {
  Gradients analytic(params);
  const double base = loss(params, &analytic);
  if (!std::isfinite(base)) throw std::runtime_error("grad_check: loss is not finite");

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (std::size_t slot = 0; slot < params.size(); ++slot) {
    Tensor& tensor = params[slot];
    std::vector<std::size_t> indices(tensor.size());
    std::iota(indices.begin(), indices.end(), 0);
    if (indices.size() > options.max_entries_per_tensor) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_entries_per_tensor);
    }
    for (std::size_t index : indices) {
      const double original = tensor[index];
      const auto at = [&](double offset) {
        tensor[index] = original + offset;
        return finite_loss(loss, params);
      };
      const double h = options.eps;
      double numeric = 0.0;
      if (options.fourth_order) {
        numeric = (at(-2 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2 * h)) / (12.0 * h);
      } else {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      }
      tensor[index] = original;

      const double a = analytic[slot][index];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = params.name(slot);
        result.worst_index = index;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace msptr
