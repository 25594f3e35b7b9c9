#include "bimanual/record.hpp"

#include <stdexcept>

namespace bimanual {

std::string to_string(Tier tier) {
  switch (tier) {
    case Tier::Full3d: return "full3d";
    case Tier::Kp3dOnly: return "kp3d_only";
    case Tier::Kp2dOnly: return "kp2d_only";
    case Tier::Imputed: return "imputed";
  }
  return "?";
}

std::string to_string(Domain domain) { return domain == Domain::InDomain ? "in-domain" : "held-out-domain"; }

Tier parse_tier(const std::string& s) {
  if (s == "full3d") return Tier::Full3d;
  if (s == "kp3d_only") return Tier::Kp3dOnly;
  if (s == "kp2d_only") return Tier::Kp2dOnly;
  if (s == "imputed") return Tier::Imputed;
  throw std::invalid_argument("unknown tier '" + s + "'");
}

Domain parse_domain(const std::string& s) {
  if (s == "in-domain") return Domain::InDomain;
  if (s == "held-out-domain") return Domain::HeldOut;
  throw std::invalid_argument("unknown domain '" + s + "'");
}

int tier_rank(Tier tier) {
  switch (tier) {
    case Tier::Full3d: return 3;
    case Tier::Imputed: return 2;
    case Tier::Kp3dOnly: return 1;
    case Tier::Kp2dOnly: return 0;
  }
  return 0;
}

std::size_t TrajectoryRecord::valid_frames() const {
  std::size_t n = 0;
  for (auto v : frame_valid) n += v ? 1 : 0;
  return n;
}

void TrajectoryRecord::validate() const {
  const std::size_t n = frames();
  const auto fail = [&](const std::string& what) { throw std::invalid_argument("record " + id + ": " + what); };
  if (keypoints2d.size() != n || keypoint_valid.size() != n || frame_valid.size() != n) {
    fail("per-frame arrays disagree in length");
  }
  if (motion && (motion->size() != n || motion->valid.size() != n)) fail("motion length differs from cameras");
  if (keypoints3d && keypoints3d->size() != n) fail("3D keypoint length differs from cameras");
  const bool want_motion = tier == Tier::Full3d || tier == Tier::Imputed;
  const bool want_kp3d = tier == Tier::Full3d || tier == Tier::Kp3dOnly;
  if (want_motion != motion.has_value()) fail("motion presence does not match tier " + to_string(tier));
  if (want_kp3d != keypoints3d.has_value()) fail("3D keypoint presence does not match tier " + to_string(tier));
  if (image_width <= 0 || image_height <= 0) fail("image size must be positive");
}

}  // namespace bimanual
