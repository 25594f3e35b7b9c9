#include "bimanual/optim.hpp"

#include <cmath>

namespace bimanual::optim {

double grad_norm(const std::vector<Tensor>& params) {
  double s = 0.0;
  for (const Tensor& p : params) {
    for (double g : p.grad()) s += g * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (Tensor& p : params) {
      for (double& g : p.impl()->grad) g *= scale;
    }
  }
  return norm;
}

void zero_grad(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

void GradientDescent::step() {
  for (Tensor& p : params_) {
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr_ * g[i];
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    const auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + options_.eps);
      data[i] -= options_.lr * (update + options_.weight_decay * data[i]);
    }
  }
}

}  // namespace bimanual::optim
