#include "dri/sinkhorn.hpp"

#include <algorithm>
#include <cmath>

#include "dri/error.hpp"

namespace dri {
namespace {

// Largest C_ij / eps for which the scaling-domain iteration is used.
constexpr double kMaxKernelExponent = 200.0;

// In place: each row of z becomes its softmax; returns the row log-sum-exps.
Eigen::VectorXd row_softmax(RowMatrix& z) {
  const Eigen::VectorXd peak = z.rowwise().maxCoeff();
  z.colwise() -= peak;
  z = z.array().exp().matrix();
  const Eigen::VectorXd sums = z.rowwise().sum();
  z = sums.cwiseInverse().asDiagonal() * z;
  return peak.array() + sums.array().log();
}

Tensor squared_distances(const Tensor& a, const Tensor& b) {
  Tensor c(a.rows(), b.rows());
  const auto am = a.mat();
  const auto bm = b.mat();
  auto cm = c.mat();
  for (Eigen::Index i = 0; i < am.rows(); ++i) {
    cm.row(i) = (bm.rowwise() - am.row(i)).rowwise().squaredNorm().transpose();
  }
  return c;
}

}  // namespace

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError("sinkhorn epsilon must be positive and finite");
  }
  if (iterations < 1) throw ConfigError("sinkhorn iterations must be >= 1");
}

EntropicTransport::EntropicTransport(Tensor source, Tensor target, SinkhornConfig cfg)
    : source_(std::move(source)), target_(std::move(target)), cfg_(cfg) {
  cfg_.validate();
  if (source_.cols() != target_.cols()) {
    throw ShapeError("transport between " + source_.shape_string() + " and " +
                     target_.shape_string() + ": feature dims differ");
  }
  const std::size_t n = source_.rows();
  const std::size_t m = target_.rows();
  const double eps = cfg_.epsilon;
  const double a = 1.0 / static_cast<double>(n);
  const double b = 1.0 / static_cast<double>(m);
  ground_cost_ = squared_distances(source_, target_);
  const Tensor& c = ground_cost_;
  const double max_cost = c.mat().maxCoeff();
  log_domain_ = !(max_cost / eps < kMaxKernelExponent);

  row_hist_.reserve(static_cast<std::size_t>(cfg_.iterations) + 1);
  col_hist_.reserve(static_cast<std::size_t>(cfg_.iterations) + 1);
  plan_ = Tensor(n, m);

  if (!log_domain_) {
    kernel_ = Tensor(n, m);
    kernel_.mat() = (-c.mat().array() / eps).exp().matrix();
    const auto kmat = kernel_.mat();
    row_hist_.emplace_back(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)));
    col_hist_.emplace_back(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(m)));
    for (int k = 0; k < cfg_.iterations; ++k) {
      const Eigen::VectorXd& u = row_hist_.back();
      const Eigen::VectorXd& v = col_hist_.back();
      const Eigen::VectorXd kv = kmat * (b * v);
      const Eigen::VectorXd ku = kmat.transpose() * (a * u);
      Eigen::VectorXd u_next = (u.array() / kv.array()).sqrt().matrix();
      Eigen::VectorXd v_next = (v.array() / ku.array()).sqrt().matrix();
      row_hist_.push_back(std::move(u_next));
      col_hist_.push_back(std::move(v_next));
    }
    const Eigen::VectorXd& u = row_hist_.back();
    const Eigen::VectorXd& v = col_hist_.back();
    plan_.mat() = (a * b) * (u.asDiagonal() * kmat * v.asDiagonal());
  } else {
    const double log_a = std::log(a);
    const double log_b = std::log(b);
    row_hist_.emplace_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)));
    col_hist_.emplace_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m)));
    const auto cm = c.mat();
    RowMatrix z(n, m);
    RowMatrix zt(m, n);
    for (int k = 0; k < cfg_.iterations; ++k) {
      const Eigen::VectorXd& f = row_hist_.back();
      const Eigen::VectorXd& g = col_hist_.back();
      z = (-cm).rowwise() + g.transpose();
      z /= eps;
      zt = (-cm.transpose()).rowwise() + f.transpose();
      zt /= eps;
      Eigen::VectorXd f_next = 0.5 * f - 0.5 * eps * (row_softmax(z).array() + log_b).matrix();
      Eigen::VectorXd g_next = 0.5 * g - 0.5 * eps * (row_softmax(zt).array() + log_a).matrix();
      row_hist_.push_back(std::move(f_next));
      col_hist_.push_back(std::move(g_next));
    }
    const Eigen::VectorXd& f = row_hist_.back();
    const Eigen::VectorXd& g = col_hist_.back();
    z = ((-cm).rowwise() + g.transpose()).colwise() + f;
    plan_.mat() = ((z.array() / eps) + (log_a + log_b)).exp().matrix();
  }
  cost_ = (plan_.mat().array() * c.mat().array()).sum();
}

// s_ij: softmax over j of the f-update at iterate k.
void EntropicTransport::row_weights(std::size_t k, Tensor& s) const {
  if (!log_domain_) {
    const Eigen::VectorXd& v = col_hist_[k];
    auto sm = s.mat();
    sm = kernel_.mat() * v.asDiagonal();
    const Eigen::VectorXd sums = sm.rowwise().sum();
    sm = sums.cwiseInverse().asDiagonal() * sm;
    return;
  }
  const Eigen::VectorXd& g = col_hist_[k];
  RowMatrix z = ((-ground_cost_.mat()).rowwise() + g.transpose()) / cfg_.epsilon;
  row_softmax(z);
  s.mat() = z;
}

// r_ij: softmax over i of the g-update at iterate k.
void EntropicTransport::col_weights(std::size_t k, Tensor& r) const {
  if (!log_domain_) {
    const Eigen::VectorXd& u = row_hist_[k];
    auto rm = r.mat();
    rm = u.asDiagonal() * kernel_.mat();
    const Eigen::RowVectorXd sums = rm.colwise().sum();
    rm = rm * sums.cwiseInverse().asDiagonal();
    return;
  }
  const Eigen::VectorXd& f = row_hist_[k];
  RowMatrix z = ((-ground_cost_.mat().transpose()).rowwise() + f.transpose()) / cfg_.epsilon;
  row_softmax(z);
  r.mat() = z.transpose();
}

void EntropicTransport::accumulate_gradient(double upstream, Tensor& grad_source,
                                            Tensor& grad_target) const {
  const std::size_t n = source_.rows();
  const std::size_t m = target_.rows();
  const double eps = cfg_.epsilon;
  const auto c = ground_cost_.mat();
  const auto p = plan_.mat();

  // Direct dependence of <P, C> on C and on the final potentials f, g.
  RowMatrix d_cost = (p.array() * (1.0 - c.array() / eps)).matrix();
  const RowMatrix pc = (p.array() * c.array()).matrix() / eps;
  Eigen::VectorXd adj_f = pc.rowwise().sum();
  Eigen::VectorXd adj_g = pc.colwise().sum().transpose();

  Tensor s(n, m);
  Tensor r(n, m);
  for (int k = cfg_.iterations - 1; k >= 0; --k) {
    row_weights(static_cast<std::size_t>(k), s);
    col_weights(static_cast<std::size_t>(k), r);
    const auto sm = s.mat();
    const auto rm = r.mat();
    d_cost.noalias() += 0.5 * (adj_f.asDiagonal() * sm);
    d_cost.noalias() += 0.5 * (rm * adj_g.asDiagonal());
    Eigen::VectorXd prev_f = 0.5 * adj_f - 0.5 * (rm * adj_g);
    Eigen::VectorXd prev_g = 0.5 * adj_g - 0.5 * (sm.transpose() * adj_f);
    adj_f = std::move(prev_f);
    adj_g = std::move(prev_g);
  }

  // C_ij = |x_i - y_j|^2, so dC/dx_i = 2 (x_i - y_j) and dC/dy_j = -2 (x_i - y_j).
  const RowMatrix w = upstream * d_cost;
  const Eigen::VectorXd w_rows = w.rowwise().sum();
  const Eigen::VectorXd w_cols = w.colwise().sum().transpose();
  const auto x = source_.mat();
  const auto y = target_.mat();
  auto gx = grad_source.mat();
  auto gy = grad_target.mat();
  gx.noalias() += 2.0 * (w_rows.asDiagonal() * x - w * y);
  gy.noalias() += 2.0 * (w_cols.asDiagonal() * y - w.transpose() * x);
}

SinkhornDivergence::SinkhornDivergence(const Tensor& a, const Tensor& b,
                                       const SinkhornConfig& cfg)
    : cross_(a, b, cfg),
      self_a_(a, a, cfg),
      self_b_(b, b, cfg),
      value_(cross_.cost() - 0.5 * self_a_.cost() - 0.5 * self_b_.cost()) {}

void SinkhornDivergence::accumulate_gradient(double upstream, Tensor& grad_a,
                                             Tensor& grad_b) const {
  cross_.accumulate_gradient(upstream, grad_a, grad_b);
  self_a_.accumulate_gradient(-0.5 * upstream, grad_a, grad_a);
  self_b_.accumulate_gradient(-0.5 * upstream, grad_b, grad_b);
}

double sinkhorn_divergence(const Tensor& a, const Tensor& b, const SinkhornConfig& cfg) {
  return SinkhornDivergence(a, b, cfg).value();
}

}  // namespace dri
