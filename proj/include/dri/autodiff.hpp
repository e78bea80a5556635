#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "dri/sinkhorn.hpp"
#include "dri/tensor.hpp"

namespace dri {

enum class OpKind {
  kInput,
  kParameter,
  kAffine,
  kElu,
  kSigmoid,
  kConcat,
  kAdd,
  kSub,
  kScale,
  kMatmul,
  kMul,
  kReduceMean,
  kReduceSum,
  kAbs,
  kSquare,
  kLog,
  kDot,
  kClamp,
  kGatherRows,
  kStandardize,
  kSinkhorn,
};

std::string_view op_name(OpKind kind);

// Reduction axis. kRows collapses the batch (row) dimension first, giving a
// 1 x cols result; kCols collapses features, giving rows x 1.
enum class Axis { kAll, kRows, kCols };

struct NodeId {
  std::size_t index = 0;
  auto operator<=>(const NodeId&) const = default;
};

using GradientMap = std::map<NodeId, Tensor>;

// Reverse-mode tape. Nodes are appended in topological order and evaluated as
// they are created, so shape errors surface at the offending node. Leaf
// values can be replaced afterwards and forward() re-evaluates the ancestors
// of a root.
//
// A Graph is single-threaded; independent graphs share nothing.
class Graph {
 public:
  NodeId input(Tensor value);
  NodeId parameter(Tensor value);

  // x * weight + bias, bias broadcast over rows.
  NodeId affine(NodeId x, NodeId weight, NodeId bias);
  // ELU with alpha = 1.
  NodeId elu(NodeId x);
  NodeId sigmoid(NodeId x);
  // Column-wise concatenation; all parts share the row count.
  NodeId concat(std::span<const NodeId> parts);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId matmul(NodeId a, NodeId b);
  // Elementwise product.
  NodeId mul(NodeId a, NodeId b);
  NodeId reduce_mean(NodeId a, Axis axis = Axis::kAll);
  NodeId reduce_sum(NodeId a, Axis axis = Axis::kAll);
  NodeId abs(NodeId a);
  NodeId square(NodeId a);
  NodeId log(NodeId a);
  // Sum of elementwise products of two equally shaped tensors, 1x1.
  NodeId dot(NodeId a, NodeId b);
  // Gradient passes only where lo < x < hi.
  NodeId clamp(NodeId a, double lo, double hi);
  NodeId gather_rows(NodeId a, std::vector<std::size_t> rows);
  // Per-column z-score over the rows, (x - mean) / sqrt(var + 1e-8).
  NodeId standardize(NodeId a);
  // Debiased entropic OT divergence between the row sets of two nodes, 1x1.
  NodeId sinkhorn(NodeId source, NodeId target, const SinkhornConfig& cfg);

  const Tensor& value(NodeId id) const;
  const Tensor& gradient(NodeId id) const;
  OpKind kind(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  std::vector<NodeId> parameters() const;

  // Replaces the value of an input or parameter node; shape must not change.
  void set_value(NodeId leaf, Tensor value);
  // Re-evaluates every ancestor of root from the current leaf values.
  const Tensor& forward(NodeId root);
  // Zeroes all accumulators, then accumulates dRoot/dNode for every node up to
  // root. Root must be 1x1. Returns the gradient of every parameter node;
  // parameters that do not reach the root get zeros.
  GradientMap backward(NodeId root);

 private:
  struct Node {
    OpKind kind = OpKind::kInput;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    double p0 = 0.0;
    double p1 = 0.0;
    Axis axis = Axis::kAll;
    std::vector<std::size_t> rows;
    SinkhornConfig ot;
    Tensor aux;
    std::shared_ptr<const SinkhornDivergence> ot_state;
  };

  NodeId push(Node node);
  void evaluate(std::size_t index);
  void propagate(std::size_t index);
  const Node& node(NodeId id) const;
  [[noreturn]] void shape_error(std::size_t index, OpKind kind, const std::string& what) const;

  std::vector<Node> nodes_;
};

}  // namespace dri
