#pragma once

#include <vector>

#include "bimanual/tensor.hpp"

namespace bimanual::optim {

/// Global L2 norm of all parameter gradients; parameters without grads contribute 0.
double grad_norm(const std::vector<Tensor>& params);

/// Rescales gradients in place so their global norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

void zero_grad(std::vector<Tensor>& params);

/// Plain gradient descent: p -= lr * grad.
class GradientDescent {
 public:
  GradientDescent(std::vector<Tensor> params, double lr) : params_(std::move(params)), lr_(lr) {}
  void step();
  std::vector<Tensor>& params() { return params_; }

 private:
  std::vector<Tensor> params_;
  double lr_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);
  void step();
  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  std::vector<Tensor>& params() { return params_; }
  long steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace bimanual::optim
