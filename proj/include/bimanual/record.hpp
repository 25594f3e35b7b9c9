#pragma once

#include <array>
#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "bimanual/camera.hpp"
#include "bimanual/hand_model.hpp"

namespace bimanual {

enum class Tier { Full3d, Kp3dOnly, Kp2dOnly, Imputed };
enum class Domain { InDomain, HeldOut };

std::string to_string(Tier tier);
std::string to_string(Domain domain);
Tier parse_tier(const std::string& s);
Domain parse_domain(const std::string& s);

/// Tier order by information content: full3d and imputed carry a motion, kp3d_only
/// carries 3D keypoints, kp2d_only only 2D.
int tier_rank(Tier tier);

using KeypointFlags = std::array<std::array<std::uint8_t, kKeypoints>, kHands>;

struct TrajectoryRecord {
  std::string id;
  Tier tier = Tier::Full3d;
  Domain domain = Domain::InDomain;
  int image_width = 640;
  int image_height = 480;

  std::optional<MotionSequence> motion;     // full3d, imputed
  std::optional<Keypoints3D> keypoints3d;   // full3d, kp3d_only
  std::vector<Camera> cameras;              // one per frame
  Keypoints2D keypoints2d;                  // one per frame
  std::vector<KeypointFlags> keypoint_valid;
  std::vector<std::uint8_t> frame_valid;    // one per frame

  nlohmann::json generator_params = nlohmann::json::object();
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t frames() const { return cameras.size(); }
  std::size_t valid_frames() const;
  /// Throws std::invalid_argument when per-frame arrays disagree in length or the
  /// populated fields do not match the tier.
  void validate() const;
};

}  // namespace bimanual
