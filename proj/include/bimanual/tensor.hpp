#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bimanual {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when an operation would produce NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

// Backward closure: reads out.grad and accumulates into the inputs' grads.
using BackwardFn = std::function<void(const TensorImpl& out, std::span<const ImplPtr> inputs)>;

struct Node {
  const char* op = "";
  std::vector<ImplPtr> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  // Zero-filled grad buffer, allocated on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 array with an optional reverse-mode gradient record.
///
/// Tensor is a handle: copies share storage. Data is immutable through the public
/// API except via mutable_data(), which exists for optimizer updates, checkpoint
/// loading and finite-difference probes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  bool is_leaf() const;
  Tensor detach() const;
  Tensor clone() const;

  // Internal access for op implementations.
  const detail::ImplPtr& impl() const { return impl_; }
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  detail::ImplPtr impl_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op result, checks it is finite and attaches it to the graph when
/// recording is enabled and some input requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, detail::BackwardFn backward);
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, detail::BackwardFn backward);

/// Reverse pass from a scalar loss. Leaf gradients accumulate; the graph behind
/// the loss is released afterwards.
void backward(const Tensor& loss);

}  // namespace bimanual
