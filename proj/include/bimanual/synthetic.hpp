#pragma once

#include <array>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "bimanual/record.hpp"

namespace bimanual {

enum class MotionFamily { Reach, Lift, Handoff, Idle };
inline constexpr int kFamilies = 4;
std::string to_string(MotionFamily f);

struct Range {
  double lo = 0.0, hi = 0.0;
  double sample(Rng& rng) const { return rng.uniform(lo, hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
  bool overlaps(const Range& o) const { return lo <= o.hi && o.lo <= hi; }
};

/// Scene parameter ranges of one domain. The in-domain and held-out presets have
/// disjoint focal, object and speed ranges.
struct DomainRanges {
  Range focal;               // pixels
  Range object_x, object_y, object_z;  // object center, first camera frame, meters
  Range object_half_width;   // lateral grasp offset of each wrist from the object center
  Range lift_height;
  Range start_x, start_y, start_z;    // wrist start; x is the lateral distance from the center
  Range duration;            // movement duration as a fraction of the horizon
  Range camera_rotation_deg; // amplitude of head rotation
  Range camera_translation;  // amplitude of head translation, meters

  static DomainRanges in_domain();
  static DomainRanges held_out();
  nlohmann::json to_json() const;
};

struct MotionGeneratorConfig {
  std::array<double, kFamilies> family_weights{0.35, 0.25, 0.25, 0.15};  // reach, lift, handoff, idle
  int horizon = 32;
  int image_width = 640;
  int image_height = 480;
  Domain domain = Domain::InDomain;
  DomainRanges ranges = DomainRanges::in_domain();
  double start_jitter = 0.02;          // meters, per wrist axis
  double articulation_noise_deg = 4.0; // static per-joint spread
  double max_wrist_accel = 0.03;       // meters / frame^2
  double truncate_prob = 0.2;          // chance a record is shorter than the horizon
  double min_length_fraction = 0.5;
  bool bimodal = false;                // fixed t=0 state, reach to one of two targets
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  /// Starts from the preset of the domain named in j (default in-domain); unknown keys throw.
  static MotionGeneratorConfig from_json(const nlohmann::json& j);
};

/// Deterministic per (cfg.seed, index). Records are full3d.
TrajectoryRecord generate_record(const MotionGeneratorConfig& cfg, std::size_t index);
std::vector<TrajectoryRecord> generate_dataset(const MotionGeneratorConfig& cfg, std::size_t n,
                                               std::size_t first_index = 0);

/// Projects 3D keypoints through per-frame cameras. Keypoints outside the image or
/// too close to the camera plane are flagged invalid and set to (0, 0).
void project_keypoints(const Keypoints3D& kp3d, const std::vector<Camera>& cameras, int width, int height,
                       Keypoints2D& kp2d, std::vector<KeypointFlags>& valid);

struct CameraAugmentConfig {
  double orbit_deg = 6.0;       // smooth orbit about the hands, peak angle
  double drift_deg = 3.0;       // rotational drift reached at the last frame
  double focal_scale = 0.1;     // focal multiplied by 1 + U(-s, s)
  int max_retries = 20;
  double shift_xy = 0.05;       // scene translation in the first camera frame, U(-s, s) meters
  double shift_z = 0.10;
  double drift_xy = 0.04;       // extra shift reached linearly by the last frame
  double drift_z = 0.10;
};

/// New camera path (identity at frame 0 so the first-frame world frame is kept), a rigid
/// translation of the whole scene and exact re-projection. Only the shift changes the motion.
/// Frame-0 keypoints must stay inside the image. Throws std::runtime_error when no retry keeps the
/// hands in front of the camera.
TrajectoryRecord camera_augment(const TrajectoryRecord& record, const CameraAugmentConfig& cfg, Rng& rng);

struct DegradeConfig {
  double jitter_sigma = 1.0;     // pixels
  double scale_jitter = 0.02;    // per-frame scale about the keypoint centroid, 1 + U(-s, s)
};

/// Drops fields beyond the target tier; kp2d_only also jitters the 2D keypoints.
TrajectoryRecord degrade_tier(const TrajectoryRecord& record, Tier target, const DegradeConfig& cfg, Rng& rng);

/// Sets joints 1..15 from a curl per finger (index, middle, pinky, ring, thumb) in [0, 1]:
/// flexion about each finger's bending axis, left hand mirrored. bias, when given, is
/// applied before each joint's flexion.
void apply_curl(HandPose& pose, const std::array<double, 5>& curl, Handedness hand,
                const std::array<Mat3, kJoints>* bias = nullptr);

/// Max |second difference| of wrist positions over valid frames.
double max_wrist_acceleration(const MotionSequence& seq);

}  // namespace bimanual
