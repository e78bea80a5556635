#include "dri/grad_check.hpp"

#include <cmath>
#include <stdexcept>

#include "dri/error.hpp"

namespace dri {

GradCheckResult grad_check(const LossBuilder& build, std::span<const Tensor> params,
                           double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check step must be positive");
  GradCheckResult result;
  Graph graph;
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (const Tensor& p : params) ids.push_back(graph.parameter(p));
  const NodeId root = build(graph, ids);
  const GradientMap grads = graph.backward(root);
  for (NodeId id : ids) result.analytic.push_back(grads.at(id));

  auto loss_at = [&](std::size_t p, Tensor perturbed) -> std::optional<double> {
    graph.set_value(ids[p], std::move(perturbed));
    try {
      const double v = graph.forward(root).item();
      if (!std::isfinite(v)) return std::nullopt;
      return v;
    } catch (const NumericError&) {
      return std::nullopt;
    }
  };

  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t e = 0; e < params[p].size(); ++e) {
      Tensor plus = params[p];
      plus[e] += step;
      Tensor minus = params[p];
      minus[e] -= step;
      const auto up = loss_at(p, std::move(plus));
      const auto down = loss_at(p, std::move(minus));
      graph.set_value(ids[p], params[p]);
      if (!up || !down) {
        if (!result.non_finite_param) result.non_finite_param = p;
        continue;
      }
      const double numeric = (*up - *down) / (2.0 * step);
      const double analytic = result.analytic[p][e];
      const double rel =
          std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_param = p;
        result.worst_entry = e;
      }
    }
  }
  graph.forward(root);
  return result;
}

}  // namespace dri
