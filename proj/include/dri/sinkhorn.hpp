#pragma once

#include <memory>
#include <vector>

#include "dri/tensor.hpp"

namespace dri {

// Entropic optimal transport between two uniform empirical measures with a
// squared Euclidean ground cost.
struct SinkhornConfig {
  double epsilon = 1.0;
  int iterations = 10;

  void validate() const;
};

// Runs symmetric (averaged) Sinkhorn updates on the dual potentials and keeps
// every iterate so the transport cost can be differentiated through the
// unrolled iterations.
//
// Iterates in the scaling domain (u = exp(f / eps)) while the Gibbs kernel
// stays well inside double range and in the log domain otherwise; both
// compute the same updates. Swapping source and target exchanges the roles of
// the two potentials, so the cost is symmetric up to summation order.
class EntropicTransport {
 public:
  EntropicTransport(Tensor source, Tensor target, SinkhornConfig cfg);

  // Primal transport cost <P, C> of the final plan.
  double cost() const { return cost_; }
  const Tensor& plan() const { return plan_; }
  const Tensor& ground_cost() const { return ground_cost_; }
  bool log_domain() const { return log_domain_; }

  // grad_source += upstream * d cost / d source (same for target).
  void accumulate_gradient(double upstream, Tensor& grad_source, Tensor& grad_target) const;

 private:
  void row_weights(std::size_t k, Tensor& s) const;
  void col_weights(std::size_t k, Tensor& r) const;

  Tensor source_;
  Tensor target_;
  SinkhornConfig cfg_;
  bool log_domain_ = false;
  Tensor ground_cost_;
  Tensor kernel_;  // exp(-C / eps), scaling domain only
  // Potentials f, g (log domain) or scalings u, v (scaling domain), one entry
  // per iterate starting from the zero potential.
  std::vector<Eigen::VectorXd> row_hist_;
  std::vector<Eigen::VectorXd> col_hist_;
  Tensor plan_;
  double cost_ = 0.0;
};

// Debiased divergence OT(a,b) - OT(a,a)/2 - OT(b,b)/2. Exactly zero for
// identical point sets; equals the ground cost for single points.
class SinkhornDivergence {
 public:
  SinkhornDivergence(const Tensor& a, const Tensor& b, const SinkhornConfig& cfg);

  double value() const { return value_; }
  // Adds upstream * gradient into grad_a / grad_b.
  void accumulate_gradient(double upstream, Tensor& grad_a, Tensor& grad_b) const;

 private:
  EntropicTransport cross_;
  EntropicTransport self_a_;
  EntropicTransport self_b_;
  double value_;
};

double sinkhorn_divergence(const Tensor& a, const Tensor& b, const SinkhornConfig& cfg);

}  // namespace dri
