#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "v2m/core/graph.hpp"

namespace v2m {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_autodiff = 0.0;
  double worst_numeric = 0.0;
};

/// Scalar function of several graph inputs.
using MultiScalarFn = std::function<Var(Graph&, std::span<const Var>)>;
using ScalarFn = std::function<Var(Graph&, Var)>;

/// Compares reverse-mode gradients against central differences with step `h`.
/// Error per coordinate is |ad - fd| / (|fd| + 1e-12); the maximum is reported.
/// Runs with finite-value checking on, so a non-finite intermediate raises
/// NumericError naming the op.
GradCheckResult grad_check(const MultiScalarFn& f, std::span<const Tensor> inputs, double h);
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double h);

}  // namespace v2m
