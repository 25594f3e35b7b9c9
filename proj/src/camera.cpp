#include "bimanual/camera.hpp"

#include <cmath>
#include <stdexcept>

namespace bimanual {

Mat3 Intrinsics::matrix() const {
  Mat3 K = Mat3::Zero();
  K(0, 0) = fx;
  K(1, 1) = fy;
  K(0, 2) = px;
  K(1, 2) = py;
  K(2, 2) = 1.0;
  return K;
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("Intrinsics: focal lengths must be positive");
  if (!std::isfinite(px) || !std::isfinite(py)) throw std::invalid_argument("Intrinsics: principal point not finite");
}

void Camera::validate() const {
  K.validate();
  if (!is_rotation(R, 1e-6)) throw std::invalid_argument("Camera: R is not a proper rotation");
  if (!t.allFinite()) throw std::invalid_argument("Camera: translation not finite");
}

Vec2 project(const Camera& camera, const Vec3& X) {
  const Vec3 Xc = camera.to_camera(X);
  if (!(Xc.z() > kMinDepth)) throw std::domain_error("project: point is behind or on the camera plane");
  return {camera.K.fx * Xc.x() / Xc.z() + camera.K.px, camera.K.fy * Xc.y() / Xc.z() + camera.K.py};
}

PluckerRay backproject_ray(const Camera& camera, const Vec2& x) {
  camera.validate();
  const Vec3 local((x.x() - camera.K.px) / camera.K.fx, (x.y() - camera.K.py) / camera.K.fy, 1.0);
  const Vec3 d = (camera.R.transpose() * local).normalized();
  return {d, camera.center().cross(d)};
}

double ray_incidence_residual(const PluckerRay& ray, const Vec3& P) {
  // P x d - m = (P - c) x d for any c on the ray.
  return (P.cross(ray.d) - ray.m).norm();
}

std::vector<double> kpe_encode(const Vec2& x, const Intrinsics& K, int n_freq) {
  const double phi_x = std::atan((x.x() - K.px) / K.fx);
  const double phi_y = std::atan((x.y() - K.py) / K.fy);
  std::vector<double> out;
  out.reserve(kpe_width(n_freq));
  out.push_back(phi_x);
  out.push_back(phi_y);
  double scale = 1.0;
  for (int j = 0; j < n_freq; ++j, scale *= 2.0) {
    out.push_back(std::sin(scale * phi_x));
    out.push_back(std::cos(scale * phi_x));
    out.push_back(std::sin(scale * phi_y));
    out.push_back(std::cos(scale * phi_y));
  }
  return out;
}

std::array<double, 9> extrinsics_encode(const Camera& camera) {
  const Rot6D r = matrix_to_rot6d(camera.R);
  return {r[0], r[1], r[2], r[3], r[4], r[5], camera.t.x(), camera.t.y(), camera.t.z()};
}

}  // namespace bimanual
