#include "featprobe/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "featprobe/errors.hpp"

namespace featprobe::ad {

i64 shape_numel(const Shape& s) {
  i64 n = 1;
  for (i64 d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

static void check_shape(const Shape& s) {
  if (s.empty()) throw ConfigError("tensor shape must have at least one axis");
  for (i64 d : s) {
    if (d <= 0)
      throw ConfigError("tensor shape has non-positive axis: " + shape_str(s));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<i64>(data.size()))
    throw ConfigError("tensor data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1)
    throw ConfigError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  if (!root.defined()) return g;
  // Iterative post-order DFS over parents; each node lands in topo_ after
  // every one of its parents.
  std::unordered_set<const TensorImpl*> seen;
  struct Frame {
    ImplPtr node;
    std::size_t next_parent = 0;
  };
  std::vector<Frame> stack;
  if (seen.insert(root.impl().get()).second)
    stack.push_back({root.impl(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      ImplPtr p = f.node->parents[f.next_parent++];
      if (seen.insert(p.get()).second) stack.push_back({std::move(p), 0});
    } else {
      g.topo_.push_back(f.node);
      stack.pop_back();
    }
  }
  return g;
}

std::vector<Tensor> Graph::parameters() const {
  std::vector<Tensor> out;
  for (const ImplPtr& n : topo_) {
    if (n->requires_grad && n->parents.empty() && !n->backward_fn)
      out.push_back(Tensor(n));
  }
  return out;
}

void backward(const Tensor& loss, const std::vector<Tensor>& params) {
  if (!loss.defined()) throw ConfigError("backward: undefined loss tensor");
  if (loss.numel() != 1)
    throw ConfigError("backward: loss must be scalar, got shape " +
                      shape_str(loss.shape()));
  Graph g = Graph::trace(loss);
  for (const ImplPtr& n : g.nodes()) n->grad.clear();
  for (const Tensor& p : params) p.impl()->grad.clear();

  loss.impl()->grad.assign(1, 1.0);
  // topo_ has parents before children; walk it backwards so each node's
  // gradient is complete before its backward_fn runs.
  const auto& nodes = g.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    TensorImpl& n = **it;
    if (!n.backward_fn) continue;
    if (n.grad.empty()) continue;  // not on any path to the loss
    n.backward_fn(n);
  }
  for (const Tensor& p : params) {
    if (p.impl()->grad.empty())
      p.impl()->grad.assign(static_cast<std::size_t>(p.numel()), 0.0);
  }
}

}  // namespace featprobe::ad
