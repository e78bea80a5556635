#include "dri/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dri/error.hpp"

namespace dri {
namespace {

constexpr double kStandardizeEps = 1e-8;

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kAffine: return "affine";
    case OpKind::kElu: return "elu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kConcat: return "concat";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kScale: return "scale";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kMul: return "elementwise-product";
    case OpKind::kReduceMean: return "reduce-mean";
    case OpKind::kReduceSum: return "reduce-sum";
    case OpKind::kAbs: return "abs";
    case OpKind::kSquare: return "square";
    case OpKind::kLog: return "log";
    case OpKind::kDot: return "dot";
    case OpKind::kClamp: return "clamp";
    case OpKind::kGatherRows: return "gather-rows";
    case OpKind::kStandardize: return "standardize";
    case OpKind::kSinkhorn: return "sinkhorn";
  }
  return "unknown";
}

const Graph::Node& Graph::node(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw std::out_of_range("node " + std::to_string(id.index) + " does not exist");
  }
  return nodes_[id.index];
}

void Graph::shape_error(std::size_t index, OpKind kind, const std::string& what) const {
  throw ShapeError("shape mismatch at node " + std::to_string(index) + " (" +
                   std::string(op_name(kind)) + "): " + what);
}

NodeId Graph::push(Node n) {
  for (NodeId in : n.inputs) {
    if (in.index >= nodes_.size()) {
      throw std::out_of_range("input node " + std::to_string(in.index) + " does not exist");
    }
    n.needs_grad = n.needs_grad || nodes_[in.index].needs_grad;
  }
  nodes_.push_back(std::move(n));
  const std::size_t index = nodes_.size() - 1;
  try {
    evaluate(index);
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  return NodeId{index};
}

NodeId Graph::input(Tensor value) {
  Node n;
  n.kind = OpKind::kInput;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::parameter(Tensor value) {
  Node n;
  n.kind = OpKind::kParameter;
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

#define DRI_SIMPLE_OP(method, op_kind)   \
  NodeId Graph::method(NodeId a) {       \
    Node n;                              \
    n.kind = op_kind;                    \
    n.inputs = {a};                      \
    return push(std::move(n));           \
  }

DRI_SIMPLE_OP(elu, OpKind::kElu)
DRI_SIMPLE_OP(sigmoid, OpKind::kSigmoid)
DRI_SIMPLE_OP(abs, OpKind::kAbs)
DRI_SIMPLE_OP(square, OpKind::kSquare)
DRI_SIMPLE_OP(log, OpKind::kLog)
DRI_SIMPLE_OP(standardize, OpKind::kStandardize)
#undef DRI_SIMPLE_OP

#define DRI_BINARY_OP(method, op_kind)     \
  NodeId Graph::method(NodeId a, NodeId b) { \
    Node n;                                \
    n.kind = op_kind;                      \
    n.inputs = {a, b};                     \
    return push(std::move(n));             \
  }

DRI_BINARY_OP(add, OpKind::kAdd)
DRI_BINARY_OP(sub, OpKind::kSub)
DRI_BINARY_OP(matmul, OpKind::kMatmul)
DRI_BINARY_OP(mul, OpKind::kMul)
DRI_BINARY_OP(dot, OpKind::kDot)
#undef DRI_BINARY_OP

NodeId Graph::affine(NodeId x, NodeId weight, NodeId bias) {
  Node n;
  n.kind = OpKind::kAffine;
  n.inputs = {x, weight, bias};
  return push(std::move(n));
}

NodeId Graph::concat(std::span<const NodeId> parts) {
  Node n;
  n.kind = OpKind::kConcat;
  n.inputs.assign(parts.begin(), parts.end());
  return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double factor) {
  Node n;
  n.kind = OpKind::kScale;
  n.inputs = {a};
  n.p0 = factor;
  return push(std::move(n));
}

NodeId Graph::reduce_mean(NodeId a, Axis axis) {
  Node n;
  n.kind = OpKind::kReduceMean;
  n.inputs = {a};
  n.axis = axis;
  return push(std::move(n));
}

NodeId Graph::reduce_sum(NodeId a, Axis axis) {
  Node n;
  n.kind = OpKind::kReduceSum;
  n.inputs = {a};
  n.axis = axis;
  return push(std::move(n));
}

NodeId Graph::clamp(NodeId a, double lo, double hi) {
  Node n;
  n.kind = OpKind::kClamp;
  n.inputs = {a};
  n.p0 = lo;
  n.p1 = hi;
  return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId a, std::vector<std::size_t> rows) {
  Node n;
  n.kind = OpKind::kGatherRows;
  n.inputs = {a};
  n.rows = std::move(rows);
  return push(std::move(n));
}

NodeId Graph::sinkhorn(NodeId source, NodeId target, const SinkhornConfig& cfg) {
  cfg.validate();
  Node n;
  n.kind = OpKind::kSinkhorn;
  n.inputs = {source, target};
  n.ot = cfg;
  return push(std::move(n));
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }
const Tensor& Graph::gradient(NodeId id) const { return node(id).grad; }
OpKind Graph::kind(NodeId id) const { return node(id).kind; }

std::vector<NodeId> Graph::parameters() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::kParameter) out.push_back(NodeId{i});
  }
  return out;
}

void Graph::set_value(NodeId leaf, Tensor value) {
  Node& n = nodes_.at(leaf.index);
  if (n.kind != OpKind::kInput && n.kind != OpKind::kParameter) {
    throw std::invalid_argument("set_value on non-leaf node " + std::to_string(leaf.index));
  }
  if (!n.value.same_shape(value)) {
    shape_error(leaf.index, n.kind, "new value " + value.shape_string() + " replaces " +
                                        n.value.shape_string());
  }
  n.value = std::move(value);
}

const Tensor& Graph::forward(NodeId root) {
  const std::size_t r = root.index;
  (void)node(root);
  std::vector<char> needed(r + 1, 0);
  needed[r] = 1;
  for (std::size_t i = r + 1; i-- > 0;) {
    if (!needed[i]) continue;
    for (NodeId in : nodes_[i].inputs) needed[in.index] = 1;
  }
  for (std::size_t i = 0; i <= r; ++i) {
    if (needed[i]) evaluate(i);
  }
  return nodes_[r].value;
}

void Graph::evaluate(std::size_t index) {
  Node& n = nodes_[index];
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k].index].value; };
  auto require_same = [&](const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) shape_error(index, n.kind, a.shape_string() + " vs " + b.shape_string());
  };

  switch (n.kind) {
    case OpKind::kInput:
    case OpKind::kParameter:
      if (n.value.size() == 0) shape_error(index, n.kind, "empty leaf value");
      break;
    case OpKind::kAffine: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.cols() != w.rows()) {
        shape_error(index, n.kind, "input " + x.shape_string() + " times weight " + w.shape_string());
      }
      if (b.rows() != 1 || b.cols() != w.cols()) {
        shape_error(index, n.kind, "bias " + b.shape_string() + " for weight " + w.shape_string());
      }
      if (n.value.rows() != x.rows() || n.value.cols() != w.cols()) {
        n.value = Tensor(x.rows(), w.cols());
      }
      auto out = n.value.mat();
      out.noalias() = x.mat() * w.mat();
      out.rowwise() += b.mat().row(0);
      break;
    }
    case OpKind::kElu: {
      const Tensor& x = in(0);
      n.value = Tensor(x.rows(), x.cols());
      for (std::size_t i = 0; i < x.size(); ++i) {
        n.value[i] = x[i] > 0.0 ? x[i] : std::expm1(x[i]);
      }
      break;
    }
    case OpKind::kSigmoid: {
      const Tensor& x = in(0);
      n.value = Tensor(x.rows(), x.cols());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        if (v >= 0.0) {
          n.value[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
          const double e = std::exp(v);
          n.value[i] = e / (1.0 + e);
        }
      }
      break;
    }
    case OpKind::kConcat: {
      if (n.inputs.empty()) shape_error(index, n.kind, "no parts");
      const std::size_t rows = in(0).rows();
      std::size_t cols = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (in(k).rows() != rows) {
          shape_error(index, n.kind, "part " + std::to_string(k) + " " + in(k).shape_string() +
                                         " has a different row count than " +
                                         in(0).shape_string());
        }
        cols += in(k).cols();
      }
      n.value = Tensor(rows, cols);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& part = in(k);
        n.value.mat().middleCols(static_cast<Eigen::Index>(offset),
                                 static_cast<Eigen::Index>(part.cols())) = part.mat();
        offset += part.cols();
      }
      break;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require_same(a, b);
      n.value = Tensor(a.rows(), a.cols());
      if (n.kind == OpKind::kAdd) {
        n.value.mat() = a.mat() + b.mat();
      } else if (n.kind == OpKind::kSub) {
        n.value.mat() = a.mat() - b.mat();
      } else {
        n.value.mat() = a.mat().cwiseProduct(b.mat());
      }
      break;
    }
    case OpKind::kScale: {
      const Tensor& a = in(0);
      n.value = Tensor(a.rows(), a.cols());
      n.value.mat() = n.p0 * a.mat();
      break;
    }
    case OpKind::kMatmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.cols() != b.rows()) {
        shape_error(index, n.kind, a.shape_string() + " times " + b.shape_string());
      }
      n.value = Tensor(a.rows(), b.cols());
      n.value.mat().noalias() = a.mat() * b.mat();
      break;
    }
    case OpKind::kReduceMean:
    case OpKind::kReduceSum: {
      const Tensor& a = in(0);
      const bool mean = n.kind == OpKind::kReduceMean;
      switch (n.axis) {
        case Axis::kAll:
          n.value = Tensor::scalar(mean ? a.mat().mean() : a.mat().sum());
          break;
        case Axis::kRows:
          n.value = Tensor(1, a.cols());
          n.value.mat() = a.mat().colwise().sum();
          if (mean) n.value.mat() /= static_cast<double>(a.rows());
          break;
        case Axis::kCols:
          n.value = Tensor(a.rows(), 1);
          n.value.mat() = a.mat().rowwise().sum();
          if (mean) n.value.mat() /= static_cast<double>(a.cols());
          break;
      }
      break;
    }
    case OpKind::kAbs: {
      const Tensor& a = in(0);
      n.value = Tensor(a.rows(), a.cols());
      n.value.mat() = a.mat().cwiseAbs();
      break;
    }
    case OpKind::kSquare: {
      const Tensor& a = in(0);
      n.value = Tensor(a.rows(), a.cols());
      n.value.mat() = a.mat().cwiseAbs2();
      break;
    }
    case OpKind::kLog: {
      const Tensor& a = in(0);
      n.value = Tensor(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = std::log(a[i]);
      break;
    }
    case OpKind::kDot: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require_same(a, b);
      n.value = Tensor::scalar(a.mat().cwiseProduct(b.mat()).sum());
      break;
    }
    case OpKind::kClamp: {
      const Tensor& a = in(0);
      n.value = Tensor(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = std::clamp(a[i], n.p0, n.p1);
      break;
    }
    case OpKind::kGatherRows: {
      const Tensor& a = in(0);
      if (n.rows.empty()) shape_error(index, n.kind, "no rows selected");
      for (std::size_t r : n.rows) {
        if (r >= a.rows()) {
          shape_error(index, n.kind, "row " + std::to_string(r) + " out of range for " +
                                         a.shape_string());
        }
      }
      n.value = a.select_rows(n.rows);
      break;
    }
    case OpKind::kStandardize: {
      const Tensor& a = in(0);
      const auto x = a.mat();
      const double rows = static_cast<double>(a.rows());
      const Eigen::RowVectorXd mean = x.colwise().sum() / rows;
      const RowMatrix centered = x.rowwise() - mean;
      const Eigen::RowVectorXd var = centered.cwiseAbs2().colwise().sum() / rows;
      n.aux = Tensor(1, a.cols());
      n.aux.mat() = (var.array() + kStandardizeEps).rsqrt().matrix();
      n.value = Tensor(a.rows(), a.cols());
      n.value.mat() = centered * n.aux.mat().row(0).asDiagonal();
      break;
    }
    case OpKind::kSinkhorn: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.cols() != b.cols()) {
        shape_error(index, n.kind, a.shape_string() + " vs " + b.shape_string() +
                                       ": feature dims differ");
      }
      n.ot_state = std::make_shared<const SinkhornDivergence>(a, b, n.ot);
      n.value = Tensor::scalar(n.ot_state->value());
      break;
    }
  }
  if (!n.value.all_finite()) {
    throw NumericError("non-finite value produced by " + std::string(op_name(n.kind)) +
                       " at node " + std::to_string(index));
  }
}

GradientMap Graph::backward(NodeId root) {
  const Node& r = node(root);
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw ShapeError("backward needs a scalar root, node " + std::to_string(root.index) +
                     " is " + r.value.shape_string());
  }
  for (Node& n : nodes_) {
    if (n.needs_grad) {
      if (n.grad.same_shape(n.value)) {
        n.grad.fill(0.0);
      } else {
        n.grad = Tensor(n.value.rows(), n.value.cols());
      }
    } else {
      n.grad = Tensor();
    }
  }
  if (nodes_[root.index].needs_grad) {
    nodes_[root.index].grad[0] = 1.0;
    for (std::size_t i = root.index + 1; i-- > 0;) {
      if (nodes_[i].needs_grad) propagate(i);
    }
  }
  GradientMap grads;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::kParameter) {
      grads.emplace(NodeId{i}, i <= root.index
                                   ? nodes_[i].grad
                                   : Tensor(nodes_[i].value.rows(), nodes_[i].value.cols()));
    }
  }
  return grads;
}

void Graph::propagate(std::size_t index) {
  Node& n = nodes_[index];
  if (n.kind == OpKind::kInput || n.kind == OpKind::kParameter) return;
  const Tensor& g = n.grad;
  auto needs = [&](std::size_t k) { return nodes_[n.inputs[k].index].needs_grad; };
  auto in_value = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k].index].value; };
  auto in_grad = [&](std::size_t k) -> Tensor& { return nodes_[n.inputs[k].index].grad; };

  switch (n.kind) {
    case OpKind::kInput:
    case OpKind::kParameter:
      break;
    case OpKind::kAffine: {
      if (needs(0)) in_grad(0).mat().noalias() += g.mat() * in_value(1).mat().transpose();
      if (needs(1)) in_grad(1).mat().noalias() += in_value(0).mat().transpose() * g.mat();
      if (needs(2)) in_grad(2).mat() += g.mat().colwise().sum();
      break;
    }
    case OpKind::kElu: {
      if (!needs(0)) break;
      const Tensor& x = in_value(0);
      Tensor& gx = in_grad(0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        gx[i] += g[i] * (x[i] > 0.0 ? 1.0 : n.value[i] + 1.0);
      }
      break;
    }
    case OpKind::kSigmoid: {
      if (!needs(0)) break;
      Tensor& gx = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value[i];
        gx[i] += g[i] * y * (1.0 - y);
      }
      break;
    }
    case OpKind::kConcat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t cols = in_value(k).cols();
        if (needs(k)) {
          in_grad(k).mat() += g.mat().middleCols(static_cast<Eigen::Index>(offset),
                                                 static_cast<Eigen::Index>(cols));
        }
        offset += cols;
      }
      break;
    }
    case OpKind::kAdd:
      if (needs(0)) in_grad(0).mat() += g.mat();
      if (needs(1)) in_grad(1).mat() += g.mat();
      break;
    case OpKind::kSub:
      if (needs(0)) in_grad(0).mat() += g.mat();
      if (needs(1)) in_grad(1).mat() -= g.mat();
      break;
    case OpKind::kMul:
      if (needs(0)) in_grad(0).mat() += g.mat().cwiseProduct(in_value(1).mat());
      if (needs(1)) in_grad(1).mat() += g.mat().cwiseProduct(in_value(0).mat());
      break;
    case OpKind::kScale:
      if (needs(0)) in_grad(0).mat() += n.p0 * g.mat();
      break;
    case OpKind::kMatmul:
      if (needs(0)) in_grad(0).mat().noalias() += g.mat() * in_value(1).mat().transpose();
      if (needs(1)) in_grad(1).mat().noalias() += in_value(0).mat().transpose() * g.mat();
      break;
    case OpKind::kReduceMean:
    case OpKind::kReduceSum: {
      if (!needs(0)) break;
      const Tensor& a = in_value(0);
      auto ga = in_grad(0).mat();
      const bool mean = n.kind == OpKind::kReduceMean;
      switch (n.axis) {
        case Axis::kAll: {
          const double share = mean ? g[0] / static_cast<double>(a.size()) : g[0];
          ga.array() += share;
          break;
        }
        case Axis::kRows: {
          const double w = mean ? 1.0 / static_cast<double>(a.rows()) : 1.0;
          ga.rowwise() += w * g.mat().row(0);
          break;
        }
        case Axis::kCols: {
          const double w = mean ? 1.0 / static_cast<double>(a.cols()) : 1.0;
          ga.colwise() += w * g.mat().col(0);
          break;
        }
      }
      break;
    }
    case OpKind::kAbs: {
      if (!needs(0)) break;
      const Tensor& a = in_value(0);
      Tensor& ga = in_grad(0);
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double sign = a[i] > 0.0 ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0);
        ga[i] += g[i] * sign;
      }
      break;
    }
    case OpKind::kSquare:
      if (needs(0)) in_grad(0).mat() += 2.0 * g.mat().cwiseProduct(in_value(0).mat());
      break;
    case OpKind::kLog:
      if (needs(0)) in_grad(0).mat() += g.mat().cwiseQuotient(in_value(0).mat());
      break;
    case OpKind::kDot:
      if (needs(0)) in_grad(0).mat() += g[0] * in_value(1).mat();
      if (needs(1)) in_grad(1).mat() += g[0] * in_value(0).mat();
      break;
    case OpKind::kClamp: {
      if (!needs(0)) break;
      const Tensor& a = in_value(0);
      Tensor& ga = in_grad(0);
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > n.p0 && a[i] < n.p1) ga[i] += g[i];
      }
      break;
    }
    case OpKind::kGatherRows: {
      if (!needs(0)) break;
      auto ga = in_grad(0).mat();
      const auto gm = g.mat();
      for (std::size_t k = 0; k < n.rows.size(); ++k) {
        ga.row(static_cast<Eigen::Index>(n.rows[k])) += gm.row(static_cast<Eigen::Index>(k));
      }
      break;
    }
    case OpKind::kStandardize: {
      if (!needs(0)) break;
      // dx = inv_std * (dz - mean(dz) - z * mean(dz * z)), column-wise.
      const auto z = n.value.mat();
      const auto gz = g.mat();
      const double rows = static_cast<double>(z.rows());
      const Eigen::RowVectorXd mean_g = gz.colwise().sum() / rows;
      const Eigen::RowVectorXd mean_gz = gz.cwiseProduct(z).colwise().sum() / rows;
      RowMatrix dx = gz.rowwise() - mean_g;
      dx -= z * mean_gz.asDiagonal();
      in_grad(0).mat() += dx * n.aux.mat().row(0).asDiagonal();
      break;
    }
    case OpKind::kSinkhorn: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      Tensor ga(a.rows(), a.cols());
      Tensor gb(b.rows(), b.cols());
      n.ot_state->accumulate_gradient(g[0], ga, gb);
      if (needs(0)) in_grad(0).mat() += ga.mat();
      if (needs(1)) in_grad(1).mat() += gb.mat();
      break;
    }
  }
}

}  // namespace dri
