#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace featprobe::ad {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

i64 shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Empty until the backward pass reaches this node; then numel-sized.
  std::vector<double> grad;
  bool requires_grad = false;
  std::string name;
  const char* op = "leaf";
  std::vector<ImplPtr> parents;
  // Accumulates d(loss)/d(parent) into each parent's grad buffer, reading
  // this node's grad. Only set on non-leaf nodes that need gradients.
  std::function<void(TensorImpl&)> backward_fn;
};

// Dense row-major tensor of doubles. Ops on Tensors record a dynamic graph;
// backward() releases gradients through it. Copies share the underlying
// node, PyTorch-style.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  i64 numel() const { return static_cast<i64>(impl_->data.size()); }
  bool requires_grad() const { return impl_->requires_grad; }

  const std::string& name() const { return impl_->name; }
  Tensor& set_name(std::string name) {
    impl_->name = std::move(name);
    return *this;
  }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const { return impl_->grad; }

  // Value of a single-element tensor.
  double item() const;

  ImplPtr impl() const { return impl_; }
  explicit Tensor(ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  ImplPtr impl_;
};

// Snapshot of everything reachable from a root node, in an order where every
// node appears after all of its parents. Built once per backward call; the
// traversal visits each node exactly once.
class Graph {
 public:
  static Graph trace(const Tensor& root);
  std::size_t size() const { return topo_.size(); }
  const std::vector<ImplPtr>& nodes() const { return topo_; }
  // Leaf nodes with requires_grad set, in discovery order.
  std::vector<Tensor> parameters() const;

 private:
  std::vector<ImplPtr> topo_;
};

// Reverse-mode gradients of a scalar loss. Clears stale gradients first.
// Every tensor in `params` is guaranteed a gradient buffer afterwards;
// parameters the loss never touched get exact zeros.
void backward(const Tensor& loss, const std::vector<Tensor>& params = {});

// ---- operations -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// Batched matmul over rank-3 operands; transpose_b multiplies against the
// transpose of each batch slice of b.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
// Exact-erf form: 0.5 x (1 + erf(x / sqrt(2))).
Tensor gelu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// Row-wise softmax of a rank-2 tensor with max subtraction. Rejects
// non-finite input.
Tensor softmax_rows(const Tensor& a);
// Row-wise layer normalisation of [R, D] with learnable gain and bias [D].
// Epsilon fixed at 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
// [R, D] plus a broadcast row vector [D].
Tensor add_bias(const Tensor& x, const Tensor& b);
// Stack `repeats` copies of x [T, D] into [repeats*T, D].
Tensor tile_rows(const Tensor& x, i64 repeats);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
// [A, B, C, D] -> [A, C, B, D]; the head split/merge step of attention.
Tensor swap_middle_axes(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
// Token mean pool: [N, T, D] -> [N, D].
Tensor mean_tokens(const Tensor& a);
// Mean squared error over all elements; composed from the primitives above.
Tensor mse(const Tensor& a, const Tensor& b);

namespace testing_hooks {
// When set, softmax_rows' backward negates its output. Exists so the
// gradient checker's sensitivity test can prove it catches a planted bug.
extern bool softmax_backward_sign_flip;
}  // namespace testing_hooks

}  // namespace featprobe::ad
