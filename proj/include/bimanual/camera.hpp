#pragma once

#include <array>
#include <vector>

#include "bimanual/rotations.hpp"

namespace bimanual {

/// Zero-skew pinhole intrinsics.
struct Intrinsics {
  double fx = 1.0, fy = 1.0, px = 0.0, py = 0.0;

  Mat3 matrix() const;
  void validate() const;
};

/// World-to-camera transform X_cam = R X + t, followed by K.
struct Camera {
  Intrinsics K;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  void validate() const;
  Vec3 center() const { return -R.transpose() * t; }
  Vec3 to_camera(const Vec3& X) const { return R * X + t; }
};

/// Points in front of the camera must have camera-frame depth above this (meters).
inline constexpr double kMinDepth = 1e-6;

/// Perspective projection of K(RX + t). Throws std::domain_error when depth <= kMinDepth.
Vec2 project(const Camera& camera, const Vec3& X);

struct PluckerRay {
  Vec3 d;  // unit direction
  Vec3 m;  // moment c x d
};

/// Ray from the camera center through pixel x, in the world frame: d = normalize(R^T K^-1 [x, y, 1]),
/// m = c x d with c = -R^T t.
PluckerRay backproject_ray(const Camera& camera, const Vec2& x);

/// Distance-like incidence residual ||(P - c) x d|| of point P against a ray through c.
double ray_incidence_residual(const PluckerRay& ray, const Vec3& P);

inline constexpr int kDefaultKpeFrequencies = 4;

inline constexpr std::size_t kpe_width(int n_freq) { return 4 * static_cast<std::size_t>(n_freq) + 2; }

/// [phi_x, phi_y, then for j < n_freq: sin(2^j phi_x), cos(2^j phi_x), sin(2^j phi_y), cos(2^j phi_y)]
/// with phi_x = atan((x - px) / fx), phi_y = atan((y - py) / fy).
std::vector<double> kpe_encode(const Vec2& x, const Intrinsics& K, int n_freq = kDefaultKpeFrequencies);

/// 6D rotation followed by translation.
std::array<double, 9> extrinsics_encode(const Camera& camera);

}  // namespace bimanual
