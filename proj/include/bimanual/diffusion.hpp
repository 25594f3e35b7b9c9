#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "bimanual/rng.hpp"
#include "bimanual/tensor.hpp"

namespace bimanual {

/// Discrete DDPM schedule. Index 0 is the clean signal; steps run 1..T.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha_bar;  // T + 1 entries, alpha_bar[0] = 1
  std::vector<double> beta;       // T + 1 entries, beta[0] = 0

  double alpha(int t) const { return 1.0 - beta[static_cast<std::size_t>(t)]; }
};

/// Improved-DDPM cosine schedule: alpha_bar(t) = f(t) / f(0), f(t) = cos^2(((t/T + s) / (1 + s)) pi/2).
/// Per-step betas are clipped to max_beta and alpha_bar is re-accumulated from the clipped betas.
NoiseSchedule cosine_schedule(int T, double s = 0.008, double max_beta = 0.999);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, with one step per leading item of x0.
Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, const std::vector<int>& steps, const Tensor& eps);

/// Noise predictor: x_t[B, ...], one step per item, and per-item flags telling whether the
/// condition is kept (0 = replace by the null condition).
using EpsFn = std::function<Tensor(const Tensor& xt, const std::vector<int>& steps, const std::vector<std::uint8_t>& cond_keep)>;

struct LossDraw {
  std::vector<int> steps;
  Tensor eps;
  std::vector<std::uint8_t> cond_keep;
  std::vector<double> weight;  // per item; empty means 1
};

/// Draws t ~ U{1..T} per item, eps ~ N(0, I) and condition-keep flags (kept with probability 1 - cond_drop).
/// Item weights are min(1 / alpha_bar_t, weight_cap) when weight_cap > 1, else left empty.
LossDraw draw_loss_terms(const NoiseSchedule& schedule, const Shape& shape, double cond_drop, Rng& rng,
                         double weight_cap = 1.0);

/// Mean of (eps_hat - eps)^2 over frames with frame_mask = 1 and all channels, weighted per item
/// when draw.weight is set. x0 is [B, T, C], frame_mask [B, T]. Throws std::invalid_argument when
/// no frame is valid.
Tensor training_loss(const NoiseSchedule& schedule, const EpsFn& model, const Tensor& x0, const Tensor& frame_mask,
                     double cond_drop, Rng& rng, double weight_cap = 1.0);
Tensor training_loss(const NoiseSchedule& schedule, const EpsFn& model, const Tensor& x0, const Tensor& frame_mask,
                     const LossDraw& draw);

/// Masked mean squared error, mask [B, T] against values [B, T, C].
Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& frame_mask);

struct SampleOptions {
  int stride = 1;  // sample on every stride-th step of the schedule (respaced ancestral sampling)
};

/// Timesteps visited by the sampler, descending, always ending at 1.
std::vector<int> sampling_steps(int T, int stride);

/// One ancestral update from step t to the previous visited step t_prev (0 for the final
/// step). noise is ignored when t_prev == 0.
Tensor posterior_step(const NoiseSchedule& schedule, const Tensor& xt, int t, int t_prev, const Tensor& eps_hat,
                      const Tensor& noise);

/// Ancestral DDPM sampling from x_T ~ N(0, I). Runs without recording gradients. The
/// condition is always kept. Throws NumericError naming the step on non-finite values.
Tensor sample(const NoiseSchedule& schedule, const EpsFn& model, const Shape& shape, Rng& rng,
              const SampleOptions& options = {});

/// As above, but item b draws its noise from item_rngs[b] only, so each item's result does
/// not depend on what else shares the batch.
Tensor sample(const NoiseSchedule& schedule, const EpsFn& model, const Shape& shape, std::vector<Rng>& item_rngs,
              const SampleOptions& options = {});

}  // namespace bimanual
