#include "bimanual/rotations.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <stdexcept>

#include "bimanual/ops.hpp"

namespace bimanual {

namespace {
constexpr double kDegenerateNorm = 1e-8;
}

Mat3 rot6d_to_matrix(const Rot6D& r) {
  const Vec3 a1(r[0], r[1], r[2]);
  const Vec3 a2(r[3], r[4], r[5]);
  const double n1 = a1.norm();
  if (!(n1 > kDegenerateNorm)) throw std::domain_error("rot6d_to_matrix: first column is zero");
  const Vec3 b1 = a1 / n1;
  const Vec3 u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (!(n2 > kDegenerateNorm * std::max(1.0, a2.norm()))) {
    throw std::domain_error("rot6d_to_matrix: columns are parallel or the second column is zero");
  }
  const Vec3 b2 = u2 / n2;
  Mat3 R;
  R.col(0) = b1;
  R.col(1) = b2;
  R.col(2) = b1.cross(b2);
  return R;
}

bool is_rotation(const Mat3& R, double tol) {
  if (!R.allFinite()) return false;
  return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

Rot6D matrix_to_rot6d(const Mat3& R) {
  if (!is_rotation(R, 1e-6)) throw std::domain_error("matrix_to_rot6d: input is not a proper rotation");
  return {R(0, 0), R(1, 0), R(2, 0), R(0, 1), R(1, 1), R(2, 1)};
}

Mat3 axis_angle_to_matrix(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-12) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Vec3 matrix_to_axis_angle(const Mat3& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.axis() * aa.angle();
}

Mat3 rotation_x(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rotation_y(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rotation_z(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix(); }

double geodesic_distance(const Mat3& R1, const Mat3& R2) {
  const double c = std::clamp(((R1.transpose() * R2).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

Tensor rot6d_to_matrix(const Tensor& r) {
  const Shape& s = r.shape();
  if (s.empty() || s.back() != 6) throw std::invalid_argument("rot6d_to_matrix: last extent must be 6, got " + shape_str(s));
  const int last = static_cast<int>(s.size()) - 1;
  Tensor a1 = slice(r, last, 0, 3);
  Tensor a2 = slice(r, last, 3, 6);

  const auto check = [](const Tensor& norm_sq, double floor, const char* what) {
    for (double v : norm_sq.data()) {
      if (!(v > floor * floor)) throw std::domain_error(std::string("rot6d_to_matrix: ") + what);
    }
  };
  Tensor n1 = sum(square(a1), last, true);
  check(n1, kDegenerateNorm, "first column is zero");
  Tensor b1 = a1 / sqrt(n1);
  Tensor u2 = a2 - sum(b1 * a2, last, true) * b1;
  Tensor n2 = sum(square(u2), last, true);
  check(n2, kDegenerateNorm, "columns are parallel or the second column is zero");
  Tensor b2 = u2 / sqrt(n2);
  Tensor b3 = cross(b1, b2);
  return stack({b1, b2, b3}, -1);
}

}  // namespace bimanual
