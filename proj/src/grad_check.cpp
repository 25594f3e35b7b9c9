#include "bimanual/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bimanual/rng.hpp"

namespace bimanual {

namespace {

double eval_scalar(const std::function<Tensor()>& loss) {
  NoGradGuard guard;
  Tensor v = loss();
  if (v.numel() != 1) throw std::invalid_argument("grad_check: loss must be scalar");
  const double x = v.item();
  if (!std::isfinite(x)) throw NumericError("grad_check: loss is not finite");
  return x;
}

}  // namespace

double grad_check(const std::function<Tensor()>& loss, const std::vector<Tensor>& leaves,
                  const GradCheckOptions& options) {
  for (const Tensor& t : leaves) {
    if (!t.requires_grad() || !t.is_leaf()) throw std::invalid_argument("grad_check: leaves must require grad");
  }
  std::vector<Tensor> params = leaves;
  for (Tensor& p : params) p.zero_grad();
  {
    Tensor l = loss();
    if (l.numel() != 1) throw std::invalid_argument("grad_check: loss must be scalar");
    if (!std::isfinite(l.item())) throw NumericError("grad_check: loss is not finite");
    backward(l);
  }
  std::vector<std::vector<double>> analytic;
  for (const Tensor& p : params) {
    analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                       : std::vector<double>(p.numel(), 0.0));
  }

  Rng rng(options.seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      shuffle(coords, rng);
      coords.resize(options.max_coords_per_tensor);
    }
    auto data = p.mutable_data();
    for (std::size_t i : coords) {
      const double orig = data[i];
      data[i] = orig + options.step;
      const double fp = eval_scalar(loss);
      data[i] = orig - options.step;
      const double fm = eval_scalar(loss);
      data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  for (Tensor& p : params) p.zero_grad();
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  GradCheckOptions options;
  options.step = step;
  return grad_check([&] { return f(leaf); }, {leaf}, options);
}

}  // namespace bimanual
