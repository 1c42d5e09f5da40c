#pragma once

// Reverse-mode differentiable arrays. 64-bit floats, row-major, define-by-run:
// every op builds a fresh node holding its inputs and a backward closure, and
// backward() walks the graph once in reverse topological order. Deterministic:
// all reductions run in a fixed order, so identical seeds and inputs give
// bit-identical values and gradients (at any thread count).

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace lip3d {

namespace detail {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;  // user flag: grad is kept after backward
  bool track = false;          // node participates in backprop
  bool consumed = false;       // backward already ran through this node
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // accumulates into parent grads

  std::size_t numel() const { return values.size(); }
};

}  // namespace detail

class DiffTensor {
 public:
  DiffTensor() = default;

  static DiffTensor zeros(std::vector<std::size_t> shape,
                          bool requires_grad = false);
  static DiffTensor full(std::vector<std::size_t> shape, double value,
                         bool requires_grad = false);
  static DiffTensor from_values(std::vector<std::size_t> shape,
                                std::vector<double> values,
                                bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->values.size(); }

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }
  double scalar() const;  // numel()==1 convenience

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const;  // throws if absent
  // Drops the grad buffer and re-arms the node for a fresh backward pass.
  void clear_grad();

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& handle() const { return node_; }

 private:
  explicit DiffTensor(std::shared_ptr<detail::TensorNode> n)
      : node_(std::move(n)) {}
  static DiffTensor make(std::vector<std::size_t> shape,
                         std::vector<double> values, bool requires_grad);
  friend DiffTensor make_op_result(std::vector<std::size_t> shape,
                                   std::vector<double> values,
                                   std::vector<DiffTensor> parents,
                                   std::function<void(detail::TensorNode&)> fn);
  std::shared_ptr<detail::TensorNode> node_;
};

// Elementwise; shapes must match.
DiffTensor add(const DiffTensor& a, const DiffTensor& b);
DiffTensor mul(const DiffTensor& a, const DiffTensor& b);

DiffTensor relu(const DiffTensor& x);
DiffTensor sigmoid(const DiffTensor& x);  // output strictly inside (0,1)

// x:[N,D] * weight:[D,E] + bias:[E] -> [N,E]
DiffTensor linear(const DiffTensor& x, const DiffTensor& weight,
                  const DiffTensor& bias);

// input:[N,C,H,W], kernel:[K,C,kh,kw], bias:[K], zero padding, stride 1.
// Output [N,K,H+2ph-kh+1,W+2pw-kw+1].
DiffTensor conv2d(const DiffTensor& input, const DiffTensor& kernel,
                  const DiffTensor& bias, std::size_t pad_h, std::size_t pad_w);

// a:[N,Ca,H,W] ++ b:[N,Cb,H,W] -> [N,Ca+Cb,H,W]
DiffTensor concat_channels(const DiffTensor& a, const DiffTensor& b);

// w:[N,C,F,L] scaled per-landmark: out[n,c,f,l] = w[n,c,f,l]*theta[l].
DiffTensor hadamard_landmark(const DiffTensor& w, const DiffTensor& theta);

// 2x2 average pooling, stride 2; H and W must be even.
DiffTensor avg_pool2(const DiffTensor& x);

// [N,C,H,W] -> [N,C] spatial mean.
DiffTensor global_avg_pool(const DiffTensor& x);

DiffTensor sum_all(const DiffTensor& x);  // -> scalar

// Mean over the batch of -log softmax(logits)[label]; max-stabilized.
DiffTensor softmax_cross_entropy(const DiffTensor& logits,
                                 const std::vector<int>& labels);

// Populates grads of every requires_grad ancestor of the scalar loss.
// A second backward over the same graph is rejected.
void backward(const DiffTensor& loss);

// Forward-only row softmax of a [N,C] tensor (evaluation helper).
std::vector<double> softmax_rows(const DiffTensor& logits);

// Thread count for the conv kernels. Results are bit-identical at any value
// because every output element keeps its sequential reduction order.
void set_num_threads(int n);
int num_threads();

}  // namespace lip3d
