#pragma once

#include <Eigen/Core>
#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dualroute {

using Mat = Eigen::MatrixXd;

// Reverse-mode tape over dense matrices. One tape holds the graph of a
// single forward pass; backward() walks it in reverse creation order.
// Leaves reference external storage (model parameters) so no parameter
// copies are made per pass.
class Tape {
 public:
  using NodeId = int;

  Tape() { nodes_.reserve(512); }

  // --- construction -------------------------------------------------------
  NodeId leaf(const Mat* external, bool requires_grad = true);
  NodeId constant(Mat value);

  // --- access --------------------------------------------------------------
  const Mat& val(NodeId id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.vptr != nullptr ? *n.vptr : n.value;
  }
  const Mat& grad(NodeId id);               // zero matrix if untouched
  bool has_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].grad_live; }
  bool requires_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // --- ops -----------------------------------------------------------------
  NodeId matmul(NodeId a, NodeId b);     // A * B
  NodeId matmul_nt(NodeId a, NodeId b);  // A * B^T
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId add_rowvec(NodeId a, NodeId row);   // broadcast a 1 x n row over rows of A
  NodeId scale(NodeId a, double s);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId mul_const(NodeId a, Mat mask);      // elementwise multiply by a constant
  NodeId add_const(NodeId a, Mat c);
  NodeId gather_rows(NodeId a, std::vector<int> rows);  // row -1 selects a zero row
  NodeId slice_rows(NodeId a, int row0, int n);
  NodeId slice_cols(NodeId a, int col0, int n);
  NodeId vstack(const std::vector<NodeId>& parts);
  NodeId hstack(const std::vector<NodeId>& parts);
  NodeId layer_norm(NodeId a, NodeId gamma, NodeId beta, double eps);  // rowwise
  NodeId gelu(NodeId a);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId log(NodeId a);
  NodeId one_minus(NodeId a);                 // 1 - A
  NodeId clamp(NodeId a, double lo, double hi);  // bumps the clamp counter
  NodeId softmax_rows(NodeId a, Mat additive_mask);  // softmax(A + mask) per row
  NodeId sum_weighted(NodeId a, Mat weights);        // 1x1: sum(A .* W)
  NodeId sum_all(NodeId a);

  // --- backward ------------------------------------------------------------
  // Seeds d(scalar)/d(scalar) = 1 and accumulates grads into the tape.
  void backward(NodeId scalar);

  // Number of values clamped by clamp() nodes on this tape, process-wide
  // counter shared across tapes lives in clamp_events().
  static std::atomic<std::uint64_t>& clamp_events();

 private:
  struct Node {
    const Mat* vptr = nullptr;  // points at `value` or at external storage
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool grad_live = false;
    std::function<void(Tape&, Node&)> back;  // empty for leaves/constants
  };

  Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Mat& grad_buffer(NodeId id);  // allocates zeros on first touch
  NodeId push(Mat value, bool requires_grad, std::function<void(Tape&, Node&)> back);

  std::vector<Node> nodes_;
};

}  // namespace dualroute
