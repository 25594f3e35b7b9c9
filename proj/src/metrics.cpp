#include "bimanual/metrics.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "bimanual/rng.hpp"

namespace bimanual {

namespace {

constexpr double kCm = 100.0;

void check_shapes(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask) {
  if (pred.size() != gt.size() || mask.size() != gt.size()) {
    throw std::invalid_argument("metrics: prediction has " + std::to_string(pred.size()) + " frames, ground truth " +
                                std::to_string(gt.size()) + ", mask " + std::to_string(mask.size()));
  }
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; })) {
    throw std::invalid_argument("metrics: no valid frames");
  }
}

double frame_error(const FrameKeypoints3D& a, const FrameKeypoints3D& b) {
  double sum = 0.0;
  for (int h = 0; h < kHands; ++h) {
    for (int k = 0; k < kKeypoints; ++k) sum += (a[h][k] - b[h][k]).norm();
  }
  return sum / (kHands * kKeypoints);
}

Keypoints3D transformed(const Keypoints3D& kp, const AlignmentTransform& T) {
  Keypoints3D out = kp;
  for (auto& frame : out) {
    for (auto& hand : frame) {
      for (auto& p : hand) p = T.apply(p);
    }
  }
  return out;
}

void stack_frame(const FrameKeypoints3D& f, std::vector<Vec3>& out) {
  for (int h = 0; h < kHands; ++h) out.insert(out.end(), f[h].begin(), f[h].end());
}

AlignmentTransform first_frame_rigid(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask) {
  check_shapes(pred, gt, mask);
  if (!mask[0]) throw std::invalid_argument("fa_mpjpe: first frame is not valid");
  std::vector<Vec3> X, Y;
  stack_frame(pred[0], X);
  stack_frame(gt[0], Y);
  return procrustes(X, Y, false);
}

std::vector<std::uint8_t> mask_of(const MotionSequence& pred, const MotionSequence& gt) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("metrics: prediction has " + std::to_string(pred.size()) + " frames, ground truth " +
                                std::to_string(gt.size()));
  }
  return gt.valid;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

AlignmentTransform procrustes(const std::vector<Vec3>& X, const std::vector<Vec3>& Y, bool with_scale) {
  if (X.size() != Y.size()) throw std::invalid_argument("procrustes: point counts differ");
  if (X.size() < 3) throw std::invalid_argument("procrustes: need at least 3 points");
  const double n = static_cast<double>(X.size());
  Vec3 mx = Vec3::Zero(), my = Vec3::Zero();
  for (std::size_t i = 0; i < X.size(); ++i) {
    mx += X[i];
    my += Y[i];
  }
  mx /= n;
  my /= n;
  Mat3 cov = Mat3::Zero(), scatter = Mat3::Zero();
  double var_x = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const Vec3 x = X[i] - mx, y = Y[i] - my;
    cov += y * x.transpose();
    scatter += x * x.transpose();
    var_x += x.squaredNorm();
  }
  const Eigen::JacobiSVD<Mat3> shape(scatter);
  const Vec3 spread = shape.singularValues();
  if (!(spread(0) > 0.0) || spread(1) <= 1e-12 * spread(0)) {
    throw std::invalid_argument("procrustes: source points are degenerate (collinear or coincident)");
  }
  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 U = svd.matrixU(), V = svd.matrixV();
  Vec3 d(1.0, 1.0, (U * V.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  AlignmentTransform T;
  T.R = U * d.asDiagonal() * V.transpose();
  T.s = with_scale ? svd.singularValues().dot(d) / var_x : 1.0;
  T.t = my - T.s * T.R * mx;
  return T;
}

double mpjpe(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask) {
  check_shapes(pred, gt, mask);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (!mask[t]) continue;
    sum += frame_error(pred[t], gt[t]);
    ++n;
  }
  return kCm * sum / static_cast<double>(n);
}

double pa_mpjpe(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask) {
  check_shapes(pred, gt, mask);
  std::vector<Vec3> X, Y;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (!mask[t]) continue;
    stack_frame(pred[t], X);
    stack_frame(gt[t], Y);
  }
  return mpjpe(transformed(pred, procrustes(X, Y, true)), gt, mask);
}

double fa_mpjpe(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask) {
  return mpjpe(transformed(pred, first_frame_rigid(pred, gt, mask)), gt, mask);
}

double mrrpe(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask) {
  check_shapes(pred, gt, mask);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (!mask[t]) continue;
    const Vec3 rp = pred[t][0][0] - pred[t][1][0];
    const Vec3 rg = gt[t][0][0] - gt[t][1][0];
    sum += (rp - rg).norm();
    ++n;
  }
  return kCm * sum / static_cast<double>(n);
}

std::vector<double> mpjpe_per_frame(const Keypoints3D& pred, const Keypoints3D& gt, const std::vector<std::uint8_t>& mask) {
  check_shapes(pred, gt, mask);
  std::vector<double> out(gt.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (mask[t]) out[t] = kCm * frame_error(pred[t], gt[t]);
  }
  return out;
}

std::vector<double> fa_mpjpe_per_frame(const Keypoints3D& pred, const Keypoints3D& gt,
                                       const std::vector<std::uint8_t>& mask) {
  return mpjpe_per_frame(transformed(pred, first_frame_rigid(pred, gt, mask)), gt, mask);
}

double mpjpe(const MotionSequence& pred, const MotionSequence& gt) {
  const auto mask = mask_of(pred, gt);
  const auto skel = BimanualSkeleton::default_template();
  return mpjpe(forward_kinematics(skel, pred), forward_kinematics(skel, gt), mask);
}

double pa_mpjpe(const MotionSequence& pred, const MotionSequence& gt) {
  const auto mask = mask_of(pred, gt);
  const auto skel = BimanualSkeleton::default_template();
  return pa_mpjpe(forward_kinematics(skel, pred), forward_kinematics(skel, gt), mask);
}

double fa_mpjpe(const MotionSequence& pred, const MotionSequence& gt) {
  const auto mask = mask_of(pred, gt);
  const auto skel = BimanualSkeleton::default_template();
  return fa_mpjpe(forward_kinematics(skel, pred), forward_kinematics(skel, gt), mask);
}

double mrrpe(const MotionSequence& pred, const MotionSequence& gt) {
  const auto mask = mask_of(pred, gt);
  const auto skel = BimanualSkeleton::default_template();
  return mrrpe(forward_kinematics(skel, pred), forward_kinematics(skel, gt), mask);
}

double token_distance(const MaskedTokens& a, const MaskedTokens& b) {
  if (a.tokens.cols() != b.tokens.cols()) throw std::invalid_argument("token_distance: token widths differ");
  const long frames = std::min(a.tokens.rows(), b.tokens.rows());
  double sum = 0.0;
  for (long t = 0; t < frames; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    if (!a.valid[ut] || !b.valid[ut]) continue;
    sum += (a.tokens.row(t) - b.tokens.row(t)).squaredNorm();
  }
  return std::sqrt(sum);
}

double diversity(const std::vector<MaskedTokens>& motions, std::uint64_t seed, std::size_t exhaustive_limit,
                 std::size_t sampled_pairs) {
  const std::size_t n = motions.size();
  if (n < 2) throw std::invalid_argument("diversity: need at least 2 motions");
  double sum = 0.0;
  std::size_t pairs = 0;
  if (n < exhaustive_limit) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j, ++pairs) sum += token_distance(motions[i], motions[j]);
    }
  } else {
    Rng rng(seed);
    for (; pairs < sampled_pairs; ++pairs) {
      const std::size_t i = rng.index(n);
      std::size_t j = rng.index(n - 1);
      if (j >= i) ++j;
      sum += token_distance(motions[i], motions[j]);
    }
  }
  return sum / static_cast<double>(pairs);
}

MultimodalityResult multimodality(const std::vector<std::vector<MaskedTokens>>& samples) {
  if (samples.empty()) throw std::invalid_argument("multimodality: no records");
  double total = 0.0;
  for (const auto& s : samples) {
    if (s.size() < 2) throw std::invalid_argument("multimodality: need at least 2 samples per record");
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (std::size_t j = i + 1; j < s.size(); ++j, ++pairs) sum += token_distance(s[i], s[j]);
    }
    total += sum / static_cast<double>(pairs);
  }
  MultimodalityResult r;
  r.value = total / static_cast<double>(samples.size());
  r.deterministic = r.value == 0.0;
  return r;
}

void TimestepCurve::add(const std::vector<double>& per_frame) {
  if (per_frame.size() > sum_.size()) {
    sum_.resize(per_frame.size(), 0.0);
    count_.resize(per_frame.size(), 0);
  }
  for (std::size_t t = 0; t < per_frame.size(); ++t) {
    if (std::isnan(per_frame[t])) continue;
    sum_[t] += per_frame[t];
    ++count_[t];
  }
}

std::vector<double> TimestepCurve::mean() const {
  std::vector<double> out(sum_.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t t = 0; t < sum_.size(); ++t) {
    if (count_[t] > 0) out[t] = sum_[t] / static_cast<double>(count_[t]);
  }
  return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(a[i]) || std::isnan(b[i])) continue;
    x.push_back(a[i]);
    y.push_back(b[i]);
  }
  if (x.size() < 2) throw std::invalid_argument("spearman: need at least 2 paired values");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace bimanual
