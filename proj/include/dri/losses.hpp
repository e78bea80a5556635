#pragma once

#include <array>
#include <span>

#include "dri/autodiff.hpp"
#include "dri/networks.hpp"
#include "dri/sinkhorn.hpp"

namespace dri {

// Multipliers of the training objective
//   L = L_reg + alpha L_class + beta L_disc + gamma L_recons + lambda L_orth + mu Reg
// Reg sums every head weight, so at alpha = gamma = 1 it overwhelms the
// classifier and decoder and both stay at their trivial solutions.
struct LossWeights {
  double alpha = 10.0;
  double beta = 1.0;
  double gamma = 10.0;
  double lambda = 10.0;
  double mu = 0.01;

  void validate() const;
};

// Lower/upper clamp applied to predicted treatment probabilities.
inline constexpr double kProbabilityClamp = 1e-7;

// Mean squared error of the factual head: (y_i - yhat_i^{t_i})^2 averaged.
NodeId regression_loss(Graph& graph, NodeId y, std::span<const int> t, NodeId y0_hat,
                       NodeId y1_hat);

// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
NodeId classification_loss(Graph& graph, std::span<const int> t, NodeId t_hat);

// Sinkhorn divergence between the rows of `embeddings` with t = 0 and t = 1.
// Throws DataError when one group is empty.
NodeId discrepancy_loss(Graph& graph, NodeId embeddings, std::span<const int> t,
                        const SinkhornConfig& cfg);

// Mean squared error over batch and feature dims.
NodeId reconstruction_loss(Graph& graph, NodeId x, NodeId x_recon);

// Sum of the six pairwise dot products of the contribution vectors:
// (G,D), (D,U), (U,G), (O,G), (O,D), (O,U).
NodeId orthogonality_loss(Graph& graph, const std::array<NodeId, 4>& contributions);

// Sum of squared weights (biases excluded) of both outcome heads, the
// treatment head, and the decoder.
NodeId parameter_regularization(Graph& graph, const BoundNetworks& nets);

struct LossParts {
  NodeId regression;
  NodeId classification;
  NodeId discrepancy;
  NodeId reconstruction;
  NodeId orthogonality;
  NodeId regularization;
};

NodeId total_loss(Graph& graph, const LossParts& parts, const LossWeights& weights);

}  // namespace dri
