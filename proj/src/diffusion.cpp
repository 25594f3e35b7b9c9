#include "bimanual/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "bimanual/ops.hpp"

namespace bimanual {

NoiseSchedule cosine_schedule(int T, double s, double max_beta) {
  if (T < 1) throw std::invalid_argument("cosine_schedule: T must be >= 1");
  const auto f = [&](double t) {
    const double c = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule sch;
  sch.T = T;
  sch.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  sch.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  const double f0 = f(0.0);
  double prev = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double closed = f(t) / f0;
    const double closed_prev = f(t - 1) / f0;
    const double b = std::min(1.0 - closed / closed_prev, max_beta);
    sch.beta[static_cast<std::size_t>(t)] = b;
    prev *= 1.0 - b;
    sch.alpha_bar[static_cast<std::size_t>(t)] = prev;
  }
  return sch;
}

namespace {

void check_steps(const NoiseSchedule& schedule, const std::vector<int>& steps, std::size_t batch) {
  if (steps.size() != batch) {
    throw std::invalid_argument("diffusion: expected " + std::to_string(batch) + " steps, got " +
                                std::to_string(steps.size()));
  }
  for (int t : steps) {
    if (t < 1 || t > schedule.T) throw std::invalid_argument("diffusion: step " + std::to_string(t) + " out of range");
  }
}

// Per-item scalar as a [B, 1, ..., 1] tensor matching x's rank.
Tensor per_item(const std::vector<double>& v, const Shape& like) {
  Shape s(like.size(), 1);
  s[0] = v.size();
  return Tensor::from(std::move(s), v);
}

}  // namespace

Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, const std::vector<int>& steps, const Tensor& eps) {
  if (x0.shape() != eps.shape()) {
    throw std::invalid_argument("q_sample: eps shape " + shape_str(eps.shape()) + " differs from x0 " +
                                shape_str(x0.shape()));
  }
  check_steps(schedule, steps, x0.size(0));
  std::vector<double> a(steps.size()), b(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double ab = schedule.alpha_bar[static_cast<std::size_t>(steps[i])];
    a[i] = std::sqrt(ab);
    b[i] = std::sqrt(1.0 - ab);
  }
  return x0 * per_item(a, x0.shape()) + eps * per_item(b, x0.shape());
}

LossDraw draw_loss_terms(const NoiseSchedule& schedule, const Shape& shape, double cond_drop, Rng& rng,
                         double weight_cap) {
  LossDraw d;
  const std::size_t batch = shape.at(0);
  d.steps.resize(batch);
  d.cond_keep.resize(batch);
  for (std::size_t i = 0; i < batch; ++i) d.steps[i] = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(schedule.T)));
  d.eps = Tensor::from(shape, rng.normal_vector(shape_numel(shape)));
  for (std::size_t i = 0; i < batch; ++i) d.cond_keep[i] = rng.bernoulli(cond_drop) ? 0 : 1;
  if (weight_cap > 1.0) {
    for (int t : d.steps) d.weight.push_back(std::min(1.0 / schedule.alpha_bar[static_cast<std::size_t>(t)], weight_cap));
  }
  return d;
}

Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& frame_mask) {
  if (pred.shape() != target.shape() || pred.dim() != 3) {
    throw std::invalid_argument("masked_mse: shapes " + shape_str(pred.shape()) + " and " + shape_str(target.shape()));
  }
  if (frame_mask.shape() != Shape{pred.size(0), pred.size(1)}) {
    throw std::invalid_argument("masked_mse: mask shape " + shape_str(frame_mask.shape()) + " for values " +
                                shape_str(pred.shape()));
  }
  double valid = 0.0;
  for (double m : frame_mask.data()) valid += m;
  if (!(valid > 0.0)) throw std::invalid_argument("masked_mse: no valid frames");
  const Tensor m = reshape(frame_mask, {pred.size(0), pred.size(1), 1});
  return sum(square(pred - target) * m) * (1.0 / (valid * static_cast<double>(pred.size(2))));
}

Tensor training_loss(const NoiseSchedule& schedule, const EpsFn& model, const Tensor& x0, const Tensor& frame_mask,
                     const LossDraw& draw) {
  const Tensor xt = q_sample(schedule, x0.detach(), draw.steps, draw.eps);
  const Tensor eps_hat = model(xt, draw.steps, draw.cond_keep);
  if (draw.weight.empty()) return masked_mse(eps_hat, draw.eps, frame_mask);
  if (draw.weight.size() != x0.size(0)) throw std::invalid_argument("training_loss: one weight per item expected");
  if (frame_mask.shape() != Shape{x0.size(0), x0.size(1)}) {
    throw std::invalid_argument("training_loss: mask shape " + shape_str(frame_mask.shape()));
  }
  std::vector<double> w(frame_mask.data().begin(), frame_mask.data().end());
  const std::size_t T = x0.size(1);
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] *= draw.weight[i / T];
    total += w[i];
  }
  if (!(total > 0.0)) throw std::invalid_argument("training_loss: no valid frames");
  const Tensor m = Tensor::from({x0.size(0), T, 1}, std::move(w));
  return sum(square(eps_hat - draw.eps) * m) * (1.0 / (total * static_cast<double>(x0.size(2))));
}

Tensor training_loss(const NoiseSchedule& schedule, const EpsFn& model, const Tensor& x0, const Tensor& frame_mask,
                     double cond_drop, Rng& rng, double weight_cap) {
  return training_loss(schedule, model, x0, frame_mask,
                       draw_loss_terms(schedule, x0.shape(), cond_drop, rng, weight_cap));
}

std::vector<int> sampling_steps(int T, int stride) {
  if (T < 1 || stride < 1) throw std::invalid_argument("sampling_steps: T and stride must be >= 1");
  std::vector<int> steps;
  for (int t = T; t >= 1; t -= stride) steps.push_back(t);
  if (steps.back() != 1) steps.push_back(1);
  return steps;
}

Tensor posterior_step(const NoiseSchedule& schedule, const Tensor& xt, int t, int t_prev, const Tensor& eps_hat,
                      const Tensor& noise) {
  if (t < 1 || t > schedule.T || t_prev < 0 || t_prev >= t) throw std::invalid_argument("posterior_step: bad step pair");
  const double ab_t = schedule.alpha_bar[static_cast<std::size_t>(t)];
  const double ab_prev = schedule.alpha_bar[static_cast<std::size_t>(t_prev)];
  const double beta = 1.0 - ab_t / ab_prev;
  const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
  const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab_t);
  const Tensor x0_hat = (xt - eps_hat * std::sqrt(1.0 - ab_t)) * (1.0 / std::sqrt(ab_t));
  Tensor mean = x0_hat * c0 + xt * ct;
  if (t_prev == 0) return mean;
  const double var = beta * (1.0 - ab_prev) / (1.0 - ab_t);
  return mean + noise * std::sqrt(var);
}

namespace {

Tensor run_sampler(const NoiseSchedule& schedule, const EpsFn& model, const Shape& shape,
                   const std::function<Tensor()>& draw, const SampleOptions& options) {
  NoGradGuard guard;
  const std::size_t batch = shape.at(0);
  Tensor x = draw();
  const std::vector<std::uint8_t> keep(batch, 1);
  const std::vector<int> steps = sampling_steps(schedule.T, options.stride);
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const int t = steps[k];
    const int t_prev = k + 1 < steps.size() ? steps[k + 1] : 0;
    try {
      const Tensor eps_hat = model(x, std::vector<int>(batch, t), keep);
      const Tensor noise = t_prev > 0 ? draw() : Tensor::zeros(shape);
      x = posterior_step(schedule, x, t, t_prev, eps_hat, noise);
    } catch (const NumericError& e) {
      throw NumericError("sample: non-finite value at step " + std::to_string(t) + " (" + e.what() + ")");
    }
  }
  return x;
}

}  // namespace

Tensor sample(const NoiseSchedule& schedule, const EpsFn& model, const Shape& shape, Rng& rng,
              const SampleOptions& options) {
  const std::size_t n = shape_numel(shape);
  return run_sampler(schedule, model, shape, [&] { return Tensor::from(shape, rng.normal_vector(n)); }, options);
}

Tensor sample(const NoiseSchedule& schedule, const EpsFn& model, const Shape& shape, std::vector<Rng>& item_rngs,
              const SampleOptions& options) {
  if (item_rngs.size() != shape.at(0)) throw std::invalid_argument("sample: need one generator per batch item");
  const std::size_t per_item = shape_numel(shape) / shape.at(0);
  return run_sampler(
      schedule, model, shape,
      [&] {
        std::vector<double> values;
        values.reserve(per_item * item_rngs.size());
        for (auto& r : item_rngs) {
          const auto v = r.normal_vector(per_item);
          values.insert(values.end(), v.begin(), v.end());
        }
        return Tensor::from(shape, std::move(values));
      },
      options);
}

}  // namespace bimanual
