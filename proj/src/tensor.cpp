#include "bimanual/tensor.hpp"

#include <algorithm>
#include <cmath>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace bimanual {

namespace {
thread_local bool g_grad_enabled = true;

// Activation and gradient buffers are reallocated every step; keep them on the heap
// instead of fresh mmap pages.
[[maybe_unused]] const bool g_allocator_tuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
  return true;
}();
}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<double>& detail::TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " holds " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(data.size()));
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("Tensor::from: non-finite value");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("Tensor: undefined");
  return impl_->shape;
}

std::size_t Tensor::size(int axis) const {
  const int n = static_cast<int>(dim());
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) throw std::out_of_range("Tensor::size: axis out of range for " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw std::logic_error("Tensor: undefined");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("Tensor: undefined");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor has shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw std::out_of_range("Tensor::at: rank mismatch");
  std::size_t flat = 0;
  std::size_t d = 0;
  for (std::size_t i : index) {
    if (i >= s[d]) throw std::out_of_range("Tensor::at: index out of range");
    flat = flat * s[d] + i;
    ++d;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw std::logic_error("Tensor: undefined");
  if (impl_->grad_fn) throw std::logic_error("Tensor::set_requires_grad: only valid on leaves");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!impl_) throw std::logic_error("Tensor: undefined");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::is_leaf() const { return impl_ && !impl_->grad_fn; }

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return from(shape(), impl_->data, requires_grad() && is_leaf()); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace {

template <class Range>
Tensor make_result_impl(const char* op, Shape shape, std::vector<double> data, const Range& inputs,
                        detail::BackwardFn backward) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": produced a non-finite value");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (any) {
      auto node = std::make_shared<detail::Node>();
      node->op = op;
      node->inputs.reserve(inputs.size());
      for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
      node->backward = std::move(backward);
      impl->requires_grad = true;
      impl->grad_fn = std::move(node);
    }
  }
  return Tensor(std::move(impl));
}

}  // namespace

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, detail::BackwardFn backward) {
  return make_result_impl(op, std::move(shape), std::move(data), inputs, std::move(backward));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   detail::BackwardFn backward) {
  return make_result_impl(op, std::move(shape), std::move(data), inputs, std::move(backward));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.impl()->grad_fn) throw std::invalid_argument("backward: loss is not attached to a graph");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      detail::TensorImpl* child = fn->inputs[next++].get();
      if (child->grad_fn && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  loss.impl()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (node->grad.empty()) continue;
    node->grad_fn->backward(*node, node->grad_fn->inputs);
  }
  for (detail::TensorImpl* node : order) {
    node->grad_fn.reset();
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->requires_grad = false;
  }
}

}  // namespace bimanual
