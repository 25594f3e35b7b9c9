#pragma once

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdint>
#include <vector>

#include "bimanual/metrics.hpp"

namespace bimanual::oracle {

// Two frames; keypoints spread over a non-degenerate cloud.
inline Keypoints3D fixture_gt() {
  Keypoints3D kp(2);
  for (int t = 0; t < 2; ++t) {
    for (int h = 0; h < kHands; ++h) {
      for (int k = 0; k < kKeypoints; ++k) {
        kp[t][h][k] = Vec3(0.01 * k - 0.1 + 0.2 * h, 0.003 * k * k - 0.05 * h, 0.5 + 0.02 * t + 0.001 * ((k * 7) % 5));
      }
    }
  }
  return kp;
}

inline Keypoints3D fixture_pred() {
  Keypoints3D kp = fixture_gt();
  for (int t = 0; t < 2; ++t) {
    for (int h = 0; h < kHands; ++h) {
      for (int k = 0; k < kKeypoints; ++k) {
        kp[t][h][k] += Vec3(0.004 * std::sin(k + t), -0.002 * h + 0.001 * t, 0.003 * std::cos(2.0 * k));
      }
    }
  }
  return kp;
}

inline double scalar_mean_error(const Keypoints3D& a, const Keypoints3D& b, const std::vector<std::uint8_t>& mask) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (!mask[t]) continue;
    for (int h = 0; h < 2; ++h) {
      for (int k = 0; k < 21; ++k) {
        const double dx = a[t][h][k].x() - b[t][h][k].x();
        const double dy = a[t][h][k].y() - b[t][h][k].y();
        const double dz = a[t][h][k].z() - b[t][h][k].z();
        sum += std::sqrt(dx * dx + dy * dy + dz * dz);
        ++n;
      }
    }
  }
  return 100.0 * sum / n;
}

// Horn's closed-form absolute orientation via the unit quaternion maximizing sum y'.R x'.
inline AlignmentTransform horn(const std::vector<Vec3>& X, const std::vector<Vec3>& Y, bool with_scale) {
  Vec3 mx = Vec3::Zero(), my = Vec3::Zero();
  for (std::size_t i = 0; i < X.size(); ++i) {
    mx += X[i];
    my += Y[i];
  }
  mx /= static_cast<double>(X.size());
  my /= static_cast<double>(X.size());
  Mat3 S = Mat3::Zero();
  double xx = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    S += (X[i] - mx) * (Y[i] - my).transpose();
    xx += (X[i] - mx).squaredNorm();
  }
  Eigen::Matrix4d N;
  N << S(0, 0) + S(1, 1) + S(2, 2), S(1, 2) - S(2, 1), S(2, 0) - S(0, 2), S(0, 1) - S(1, 0),
      S(1, 2) - S(2, 1), S(0, 0) - S(1, 1) - S(2, 2), S(0, 1) + S(1, 0), S(2, 0) + S(0, 2),
      S(2, 0) - S(0, 2), S(0, 1) + S(1, 0), -S(0, 0) + S(1, 1) - S(2, 2), S(1, 2) + S(2, 1),
      S(0, 1) - S(1, 0), S(2, 0) + S(0, 2), S(1, 2) + S(2, 1), -S(0, 0) - S(1, 1) + S(2, 2);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(N);
  const Eigen::Vector4d q = eig.eigenvectors().col(3);
  AlignmentTransform T;
  T.R = Eigen::Quaterniond(q(0), q(1), q(2), q(3)).toRotationMatrix();
  double yrx = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) yrx += (Y[i] - my).dot(T.R * (X[i] - mx));
  T.s = with_scale ? yrx / xx : 1.0;
  T.t = my - T.s * T.R * mx;
  return T;
}

inline std::vector<Vec3> flatten(const Keypoints3D& kp, const std::vector<std::uint8_t>& mask, std::size_t only = SIZE_MAX) {
  std::vector<Vec3> out;
  for (std::size_t t = 0; t < kp.size(); ++t) {
    if (!mask[t] || (only != SIZE_MAX && t != only)) continue;
    for (int h = 0; h < 2; ++h) out.insert(out.end(), kp[t][h].begin(), kp[t][h].end());
  }
  return out;
}

inline Keypoints3D aligned(const Keypoints3D& kp, const AlignmentTransform& T) {
  Keypoints3D out = kp;
  for (auto& f : out) {
    for (auto& h : f) {
      for (auto& p : h) p = T.apply(p);
    }
  }
  return out;
}

}  // namespace bimanual::oracle
