#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dri/autodiff.hpp"

namespace dri {

// Builds a scalar loss on `graph` from parameter nodes created for each
// checked tensor. Must be deterministic.
using LossBuilder = std::function<NodeId(Graph& graph, std::span<const NodeId> params)>;

struct GradCheckResult {
  // max over entries of |analytic - numeric| / (|analytic| + |numeric| + 1e-12)
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
  // Set when a perturbed loss was NaN/Inf; names the parameter being perturbed.
  std::optional<std::size_t> non_finite_param;
  std::vector<Tensor> analytic;

  bool ok(double tolerance) const {
    return !non_finite_param && max_relative_error < tolerance;
  }
};

// Compares reverse-mode gradients with central differences of width 2*step.
GradCheckResult grad_check(const LossBuilder& build, std::span<const Tensor> params,
                           double step);

}  // namespace dri
