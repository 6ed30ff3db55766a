#pragma once

// Reverse-mode autodiff on a flat tape of float64 tensors. Nodes are created
// in forward order, so reverse creation order is a valid topological order
// for the backward sweep. Every op's backward is written by hand against
// Eigen maps — nothing here is numerically clever beyond stable softmax /
// log-sum-exp, which is what lets analytic gradients track central finite
// differences to ~1e-10 relative in double precision.

#include <functional>
#include <vector>

#include "umami/tensor.hpp"

namespace umami::ag {

class Tape;
using NodeId = int;

class Tape {
 public:
  // Leaf with gradient tracking (parameters, inputs under test).
  NodeId leaf(Tensor value);
  // Constant: same storage, but marked so backward can skip it. Gradients
  // flowing into a constant are simply dropped.
  NodeId constant(Tensor value);

  const Tensor& val(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor& val(NodeId id) { return nodes_[static_cast<std::size_t>(id)].value; }
  // Gradient of the last backward() root w.r.t. this node (zeros if the node
  // does not influence the root). Valid after backward().
  const Tensor& grad(NodeId id);

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. root must be
  // scalar. May be called once per tape.
  void backward(NodeId root);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend NodeId make_node(Tape&, Tensor, std::vector<NodeId>, std::function<void(Tape&, NodeId)>);

  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;   // grad buffer allocated (lazily, during backward)
    bool is_constant = false;
    std::function<void(Tape&, NodeId)> back;  // empty for leaves/constants
  };

  Tensor& grad_buffer(NodeId id);
  void accumulate(NodeId id, const Tensor& g);

  std::vector<Node> nodes_;
  bool swept_ = false;

  // op implementations need accumulate()
  friend struct OpAccess;
};

// Internal accessor used by op backward lambdas.
struct OpAccess {
  static void accumulate(Tape& t, NodeId id, const Tensor& g) { t.accumulate(id, g); }
  static Tensor& grad_buffer(Tape& t, NodeId id) { return t.grad_buffer(id); }
  static bool is_constant(const Tape& t, NodeId id) { return t.nodes_[static_cast<std::size_t>(id)].is_constant; }
  static bool has_grad(const Tape& t, NodeId id) { return t.nodes_[static_cast<std::size_t>(id)].has_grad; }
};

// ---- ops ---------------------------------------------------------------
// All return the id of a freshly appended node.

NodeId add(Tape& t, NodeId a, NodeId b);            // same shape
NodeId sub(Tape& t, NodeId a, NodeId b);            // same shape
NodeId mul(Tape& t, NodeId a, NodeId b);            // elementwise, same shape
NodeId div(Tape& t, NodeId a, NodeId b);            // elementwise, same shape
NodeId add_scalar(Tape& t, NodeId a, double c);
NodeId scale(Tape& t, NodeId a, double c);
NodeId add_bias(Tape& t, NodeId a, NodeId bias);    // a:[N,C] + bias:[C] per row

NodeId matmul(Tape& t, NodeId a, NodeId b);         // [m,k]x[k,n] -> [m,n]
NodeId matmul_nt(Tape& t, NodeId a, NodeId b);      // [m,k]x[n,k]^T -> [m,n]

NodeId gelu(Tape& t, NodeId a);                     // exact erf form (smooth)
NodeId sigmoid(Tape& t, NodeId a);
NodeId log_(Tape& t, NodeId a);
NodeId abs_(Tape& t, NodeId a);
NodeId square(Tape& t, NodeId a);
NodeId clip(Tape& t, NodeId a, double lo, double hi);  // zero gradient outside [lo,hi]

NodeId layer_norm(Tape& t, NodeId a, NodeId gain, NodeId bias, double eps);  // per row
NodeId softmax_rows(Tape& t, NodeId a);             // stable, per row

NodeId gather_rows(Tape& t, NodeId a, std::vector<long> idx);   // rows of a, also embedding lookup
NodeId slice_cols(Tape& t, NodeId a, long c0, long c1);
NodeId concat_cols(Tape& t, const std::vector<NodeId>& parts);  // equal row counts
NodeId concat_rows(Tape& t, const std::vector<NodeId>& parts);  // equal col counts
NodeId reshape(Tape& t, NodeId a, std::vector<long> shape);     // same numel
NodeId transpose(Tape& t, NodeId a);

NodeId sum_all(Tape& t, NodeId a);    // -> [1]
NodeId mean_all(Tape& t, NodeId a);   // -> [1]

// Mean cross-entropy of rows of `logits` against integer targets, fused with
// a stable log-softmax. targets.size() must equal logits rows.
NodeId ce_mean(Tape& t, NodeId logits, std::vector<long> targets);

// Mean of [1]-shaped nodes (used to average per-sample losses).
NodeId mean_of(Tape& t, const std::vector<NodeId>& scalars);

}  // namespace umami::ag
