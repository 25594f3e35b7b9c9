#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bimanual/pipeline.hpp"

namespace bimanual::detail {

/// Normalized, flattened T x 198 tokens of a record and its training frame mask.
std::vector<double> record_tokens(const TrajectoryRecord& r, const NormStats& norm, int horizon,
                                  std::vector<std::uint8_t>& valid);

std::string dataset_hash(const std::vector<TrajectoryRecord>& records);

/// Rounds parameters to the precision stored in checkpoints, so a reloaded model matches.
void round_to_checkpoint(const nn::Module& net);

/// Adam over shuffled mini-batches with global gradient clipping and optional cosine decay.
TrainLog fit(const std::vector<Tensor>& params, std::size_t n_items, const TrainConfig& tcfg,
             const std::function<void(int epoch)>& on_epoch,
             const std::function<Tensor(const std::vector<std::size_t>& batch, Rng& rng)>& batch_loss);

}  // namespace bimanual::detail
