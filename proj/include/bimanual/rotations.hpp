#pragma once

#include <Eigen/Dense>
#include <array>

#include "bimanual/rng.hpp"
#include "bimanual/tensor.hpp"

namespace bimanual {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// First two columns of a rotation matrix, concatenated: [c0x, c0y, c0z, c1x, c1y, c1z].
using Rot6D = std::array<double, 6>;

/// Gram-Schmidt decode. Throws std::domain_error on a zero first column or parallel columns.
Mat3 rot6d_to_matrix(const Rot6D& r);

/// Drops the third column. Throws std::domain_error when R is not a proper rotation.
Rot6D matrix_to_rot6d(const Mat3& R);

bool is_rotation(const Mat3& R, double tol = 1e-9);

Mat3 axis_angle_to_matrix(const Vec3& axis_angle);
Vec3 matrix_to_axis_angle(const Mat3& R);
Mat3 rotation_x(double angle);
Mat3 rotation_y(double angle);
Mat3 rotation_z(double angle);

/// Angle of R1^T R2, in radians.
double geodesic_distance(const Mat3& R1, const Mat3& R2);

/// Uniform rotation from a normalized Gaussian quaternion.
Mat3 random_rotation(Rng& rng);

/// Batched differentiable decode: r[..., 6] -> R[..., 3, 3] (columns are the
/// Gram-Schmidt basis). Degenerate entries throw std::domain_error.
Tensor rot6d_to_matrix(const Tensor& r);

}  // namespace bimanual
