#include "dri/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "dri/error.hpp"

namespace dri {
namespace {

void check_treatments(std::span<const int> t, std::size_t rows, const char* what) {
  if (t.empty()) throw DataError(std::string(what) + ": empty batch");
  if (t.size() != rows) {
    throw ShapeError(std::string(what) + ": " + std::to_string(t.size()) +
                     " treatments for " + std::to_string(rows) + " rows");
  }
  for (int v : t) {
    if (v != 0 && v != 1) throw DataError(std::string(what) + ": treatment must be 0 or 1");
  }
}

Tensor treatment_column(std::span<const int> t, bool treated) {
  Tensor out(t.size(), 1);
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = (t[i] == 1) == treated ? 1.0 : 0.0;
  return out;
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma, lambda, mu}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw ConfigError("loss weights must be finite and non-negative");
    }
  }
}

NodeId regression_loss(Graph& graph, NodeId y, std::span<const int> t, NodeId y0_hat,
                       NodeId y1_hat) {
  check_treatments(t, graph.value(y).rows(), "regression_loss");
  const NodeId treated = graph.input(treatment_column(t, true));
  const NodeId control = graph.input(treatment_column(t, false));
  const NodeId factual =
      graph.add(graph.mul(treated, y1_hat), graph.mul(control, y0_hat));
  return graph.reduce_mean(graph.square(graph.sub(y, factual)));
}

NodeId classification_loss(Graph& graph, std::span<const int> t, NodeId t_hat) {
  check_treatments(t, graph.value(t_hat).rows(), "classification_loss");
  const std::size_t n = t.size();
  const NodeId p = graph.clamp(t_hat, kProbabilityClamp, 1.0 - kProbabilityClamp);
  const NodeId treated = graph.input(treatment_column(t, true));
  const NodeId control = graph.input(treatment_column(t, false));
  const NodeId one_minus_p = graph.sub(graph.input(Tensor(n, 1, 1.0)), p);
  const NodeId log_lik = graph.add(graph.mul(treated, graph.log(p)),
                                   graph.mul(control, graph.log(one_minus_p)));
  return graph.scale(graph.reduce_mean(log_lik), -1.0);
}

NodeId discrepancy_loss(Graph& graph, NodeId embeddings, std::span<const int> t,
                        const SinkhornConfig& cfg) {
  check_treatments(t, graph.value(embeddings).rows(), "discrepancy_loss");
  std::vector<std::size_t> control;
  std::vector<std::size_t> treated;
  for (std::size_t i = 0; i < t.size(); ++i) (t[i] == 1 ? treated : control).push_back(i);
  if (control.empty() || treated.empty()) {
    throw DataError("discrepancy_loss needs both treatment groups in the batch");
  }
  const NodeId source = graph.gather_rows(embeddings, std::move(control));
  const NodeId target = graph.gather_rows(embeddings, std::move(treated));
  return graph.sinkhorn(source, target, cfg);
}

NodeId reconstruction_loss(Graph& graph, NodeId x, NodeId x_recon) {
  return graph.reduce_mean(graph.square(graph.sub(x_recon, x)));
}

NodeId orthogonality_loss(Graph& graph, const std::array<NodeId, 4>& w) {
  const std::size_t len = graph.value(w[0]).size();
  for (NodeId id : w) {
    if (graph.value(id).size() != len) {
      throw ShapeError("orthogonality_loss: contribution vectors differ in length");
    }
  }
  constexpr std::array<std::pair<int, int>, 6> kPairs = {
      {{0, 1}, {1, 2}, {2, 0}, {3, 0}, {3, 1}, {3, 2}}};
  NodeId sum = graph.dot(w[kPairs[0].first], w[kPairs[0].second]);
  for (std::size_t k = 1; k < kPairs.size(); ++k) {
    sum = graph.add(sum, graph.dot(w[static_cast<std::size_t>(kPairs[k].first)],
                                   w[static_cast<std::size_t>(kPairs[k].second)]));
  }
  return sum;
}

NodeId parameter_regularization(Graph& graph, const BoundNetworks& nets) {
  std::vector<NodeId> terms;
  for (const BoundMlp* m : {&nets.head_y1, &nets.head_y0, &nets.head_treat, &nets.decoder}) {
    for (NodeId w : m->weights) terms.push_back(graph.reduce_sum(graph.square(w)));
  }
  NodeId sum = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) sum = graph.add(sum, terms[i]);
  return sum;
}

NodeId total_loss(Graph& graph, const LossParts& parts, const LossWeights& weights) {
  weights.validate();
  NodeId total = parts.regression;
  const std::array<std::pair<NodeId, double>, 5> weighted = {{
      {parts.classification, weights.alpha},
      {parts.discrepancy, weights.beta},
      {parts.reconstruction, weights.gamma},
      {parts.orthogonality, weights.lambda},
      {parts.regularization, weights.mu},
  }};
  for (const auto& [part, w] : weighted) {
    if (graph.value(part).size() != 1) throw ShapeError("total_loss parts must be scalars");
    total = graph.add(total, graph.scale(part, w));
  }
  return total;
}

}  // namespace dri
