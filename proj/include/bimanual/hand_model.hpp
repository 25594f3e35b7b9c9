#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bimanual/rotations.hpp"
#include "bimanual/tensor.hpp"

namespace bimanual {

inline constexpr int kJoints = 16;
inline constexpr int kTips = 5;
inline constexpr int kKeypoints = kJoints + kTips;
inline constexpr int kHands = 2;
inline constexpr int kHandTokenDim = kJoints * 6 + 3;    // 99
inline constexpr int kTokenDim = kHands * kHandTokenDim;  // 198

enum class Handedness { Left = 0, Right = 1 };

/// Fixed-template kinematic chain for one hand. Joint order: wrist, then index,
/// middle, pinky, ring, thumb (3 joints each, proximal to distal). Fingertips are
/// appended as keypoints 16..20 in thumb, index, middle, ring, pinky order.
struct HandSkeleton {
  std::array<int, kJoints> parent{};
  std::array<Vec3, kJoints> offsets{};  // from parent joint, rest pose, meters
  std::array<int, kTips> tip_parent{};
  std::array<Vec3, kTips> tip_offsets{};
  Handedness handedness = Handedness::Right;

  void validate() const;
  double bone_length(int keypoint) const;
  /// Parent keypoint of keypoint k (k >= 1).
  int keypoint_parent(int k) const;
};

struct BimanualSkeleton {
  std::array<HandSkeleton, kHands> hands;  // left, right

  static BimanualSkeleton default_template();
  /// JSON with "right" (and optionally "left"; mirrored from right when absent).
  static BimanualSkeleton load(const std::string& path);
  static BimanualSkeleton from_json_text(const std::string& text);
  std::string to_json_text() const;
};

/// Per-hand articulation: raw 6D per joint (joint 0 is the global wrist orientation)
/// and wrist translation in the t=0 camera frame. Rotations are decoded on demand.
struct HandPose {
  std::array<Rot6D, kJoints> theta{};
  Vec3 wrist = Vec3::Zero();

  static HandPose identity();
  Mat3 rotation(int joint) const { return rot6d_to_matrix(theta[static_cast<std::size_t>(joint)]); }
  void set_rotation(int joint, const Mat3& R) { theta[static_cast<std::size_t>(joint)] = matrix_to_rot6d(R); }
};

using FramePose = std::array<HandPose, kHands>;

struct MotionSequence {
  std::vector<FramePose> frames;
  std::vector<std::uint8_t> valid;  // one flag per frame

  std::size_t size() const { return frames.size(); }
  std::size_t valid_count() const;
  bool is_valid(std::size_t t) const { return valid[t] != 0; }
  void resize(std::size_t n);
};

using HandKeypoints3D = std::array<Vec3, kKeypoints>;
using FrameKeypoints3D = std::array<HandKeypoints3D, kHands>;
using Keypoints3D = std::vector<FrameKeypoints3D>;
using HandKeypoints2D = std::array<Vec2, kKeypoints>;
using FrameKeypoints2D = std::array<HandKeypoints2D, kHands>;
using Keypoints2D = std::vector<FrameKeypoints2D>;

HandKeypoints3D forward_kinematics(const HandSkeleton& skeleton, const HandPose& pose);
Keypoints3D forward_kinematics(const BimanualSkeleton& skeleton, const MotionSequence& seq);

/// Differentiable FK: rot6d[N, 16, 6], wrist[N, 3] -> keypoints[N, 21, 3].
Tensor forward_kinematics(const HandSkeleton& skeleton, const Tensor& rot6d, const Tensor& wrist);

using TokenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// T x 198: per frame, left [16 x 6D, wrist xyz] then right. Raw meters; translation
/// normalization is a separate step.
TokenMatrix pack_tokens(const MotionSequence& seq);

/// Inverse of pack_tokens. Every frame is marked valid unless a mask is supplied.
MotionSequence unpack_tokens(const TokenMatrix& tokens);
MotionSequence unpack_tokens(const TokenMatrix& tokens, const std::vector<std::uint8_t>& valid);

inline constexpr int token_translation_offset(int hand) { return hand * kHandTokenDim + kJoints * 6; }

}  // namespace bimanual
