#pragma once

#include <json.hpp>
#include <optional>
#include <vector>

#include "bimanual/record.hpp"

namespace bimanual {

struct RefineConfig {
  int iters = 1000;
  double lr = 0.01;
  double clip = 1.0;
  bool clip_per_tensor = true;  // clip each hand's theta and wrist gradients separately; false clips their joint norm
  double weight_3d = 1.0;  // on mean squared 3D error in cm^2, next to mean squared pixel error

  void validate() const;
  nlohmann::json to_json() const;
  static RefineConfig from_json(const nlohmann::json& j);
};

/// Labels the refinement objective is fitted against.
struct RefineTargets {
  const Keypoints2D* keypoints2d = nullptr;
  const std::vector<KeypointFlags>* keypoint_valid = nullptr;
  const std::vector<Camera>* cameras = nullptr;
  const std::vector<std::uint8_t>* frame_valid = nullptr;
  const Keypoints3D* keypoints3d = nullptr;  // optional

  static RefineTargets from_record(const TrajectoryRecord& r, bool use_3d = true);
};

/// Differentiable objective over per-hand leaves theta[h] [T, 16, 6] and wrist[h] [T, 3].
class RefineObjective {
 public:
  RefineObjective(const RefineTargets& targets, double weight_3d);
  Tensor operator()(const std::array<Tensor, kHands>& theta, const std::array<Tensor, kHands>& wrist) const;
  /// Mean per-keypoint pixel distance to the labels.
  double mean_pixel_error(const MotionSequence& motion) const;
  std::size_t frames() const { return frames_; }
  bool has_labels() const { return n2d_ > 0 || n3d_ > 0; }

 private:
  BimanualSkeleton skeleton_;
  std::size_t frames_ = 0;
  double weight_3d_ = 0.0;
  Tensor R_t_, offset_, fx_, fy_, px_, py_;  // [T,3,3], [T,1,3], [T,1,1] x4
  std::array<Tensor, kHands> target2d_, mask2d_, target3d_;
  Tensor mask3d_;
  double n2d_ = 0.0, n3d_ = 0.0;
  const RefineTargets targets_;
};

struct RefineResult {
  MotionSequence motion;            // best iterate
  std::vector<double> loss_trace;   // loss at each evaluated iterate (iters + 1 values)
  double initial_loss = 0.0;
  double best_loss = 0.0;
  int best_iter = 0;
  double initial_pixel_error = 0.0;
  double final_pixel_error = 0.0;
};

/// Plain gradient descent on the reprojection objective with gradient-norm clipping
/// (see RefineConfig::clip_per_tensor); returns the best iterate. Throws NumericError on a non-finite loss.
RefineResult refine_reprojection(const MotionSequence& init, const RefineTargets& targets, const RefineConfig& cfg);

}  // namespace bimanual
