#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "bimanual/tensor.hpp"

namespace bimanual {

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded random subset of this size per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

/// Max over probed coordinates of |analytic - numeric| / max(1, |numeric|), using
/// central differences. `loss` must be deterministic and return a scalar.
double grad_check(const std::function<Tensor()>& loss, const std::vector<Tensor>& leaves,
                  const GradCheckOptions& options = {});

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step = 1e-5);

}  // namespace bimanual
