#pragma once

#include <cstdint>
#include <vector>

#include "bimanual/hand_model.hpp"

namespace bimanual {

/// y = s R x + t
struct AlignmentTransform {
  double s = 1.0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return s * R * x + t; }
};

/// Least-squares similarity (or rigid, with_scale = false) transform taking X onto Y.
/// Throws std::invalid_argument for fewer than 3 points or collinear X.
AlignmentTransform procrustes(const std::vector<Vec3>& X, const std::vector<Vec3>& Y, bool with_scale = true);

/// Keypoint-level metrics over frames where mask is set. All results in centimeters.
double mpjpe(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask);
double pa_mpjpe(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask);
double fa_mpjpe(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask);
double mrrpe(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask);

/// Per-frame mean keypoint error in cm; NaN where the mask is unset.
std::vector<double> mpjpe_per_frame(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask);
std::vector<double> fa_mpjpe_per_frame(const Keypoints3D& pred, const Keypoints3D& gt,
                                       const std::vector<std::uint8_t>& mask);

/// Motion-level wrappers: FK on the default template, mask taken from gt.
double mpjpe(const MotionSequence& pred, const MotionSequence& gt);
double pa_mpjpe(const MotionSequence& pred, const MotionSequence& gt);
double fa_mpjpe(const MotionSequence& pred, const MotionSequence& gt);
double mrrpe(const MotionSequence& pred, const MotionSequence& gt);

struct MaskedTokens {
  TokenMatrix tokens;
  std::vector<std::uint8_t> valid;
};

/// L2 distance between flattened tokens over frames valid in both.
double token_distance(const MaskedTokens& a, const MaskedTokens& b);

/// Mean pairwise token distance. Exhaustive below exhaustive_limit motions, otherwise
/// `sampled_pairs` uniformly drawn pairs from a generator seeded with `seed`.
double diversity(const std::vector<MaskedTokens>& motions, std::uint64_t seed = 0,
                 std::size_t exhaustive_limit = 1000, std::size_t sampled_pairs = 100000);

struct MultimodalityResult {
  double value = 0.0;
  bool deterministic = false;  // every record's samples coincide
};

/// samples[r] holds k >= 2 samples for record r.
MultimodalityResult multimodality(const std::vector<std::vector<MaskedTokens>>& samples);

/// Accumulates per-timestep curves across records of varying length.
class TimestepCurve {
 public:
  void add(const std::vector<double>& per_frame);
  std::vector<double> mean() const;  // NaN where no record contributed
  std::size_t length() const { return sum_.size(); }

 private:
  std::vector<double> sum_;
  std::vector<std::size_t> count_;
};

double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace bimanual
