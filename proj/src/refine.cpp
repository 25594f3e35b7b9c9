#include "bimanual/refine.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "bimanual/ops.hpp"
#include "bimanual/optim.hpp"

namespace bimanual {

using nlohmann::json;

void RefineConfig::validate() const {
  if (iters < 0) throw std::invalid_argument("refine: iters must be >= 0");
  if (!(lr > 0.0) || !(clip > 0.0)) throw std::invalid_argument("refine: lr and clip must be positive");
  if (!(weight_3d >= 0.0)) throw std::invalid_argument("refine: weight_3d must be >= 0");
}

json RefineConfig::to_json() const {
  return {{"iters", iters}, {"lr", lr}, {"clip", clip}, {"clip_per_tensor", clip_per_tensor}, {"weight_3d", weight_3d}};
}

RefineConfig RefineConfig::from_json(const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k != "iters" && k != "lr" && k != "clip" && k != "clip_per_tensor" && k != "weight_3d") {
      throw std::invalid_argument("refine: unknown key " + k);
    }
  }
  RefineConfig c;
  c.iters = j.value("iters", c.iters);
  c.lr = j.value("lr", c.lr);
  c.clip = j.value("clip", c.clip);
  c.clip_per_tensor = j.value("clip_per_tensor", c.clip_per_tensor);
  c.weight_3d = j.value("weight_3d", c.weight_3d);
  c.validate();
  return c;
}

RefineTargets RefineTargets::from_record(const TrajectoryRecord& r, bool use_3d) {
  RefineTargets t;
  t.keypoints2d = &r.keypoints2d;
  t.keypoint_valid = &r.keypoint_valid;
  t.cameras = &r.cameras;
  t.frame_valid = &r.frame_valid;
  if (use_3d && r.keypoints3d) t.keypoints3d = &*r.keypoints3d;
  return t;
}

namespace {

Tensor column(const std::vector<double>& v) { return Tensor::from({v.size(), 1, 1}, v); }

void split_motion(const MotionSequence& m, std::array<Tensor, kHands>& theta, std::array<Tensor, kHands>& wrist) {
  const std::size_t T = m.size();
  for (int h = 0; h < kHands; ++h) {
    std::vector<double> th, wr;
    th.reserve(T * kJoints * 6);
    wr.reserve(T * 3);
    for (std::size_t t = 0; t < T; ++t) {
      const HandPose& p = m.frames[t][h];
      for (const auto& r : p.theta) th.insert(th.end(), r.begin(), r.end());
      wr.insert(wr.end(), {p.wrist.x(), p.wrist.y(), p.wrist.z()});
    }
    theta[h] = Tensor::from({T, kJoints, 6}, std::move(th), true);
    wrist[h] = Tensor::from({T, 3}, std::move(wr), true);
  }
}

MotionSequence join_motion(const std::array<Tensor, kHands>& theta, const std::array<Tensor, kHands>& wrist,
                           const std::vector<std::uint8_t>& valid) {
  MotionSequence m;
  m.frames.resize(valid.size());
  m.valid = valid;
  for (int h = 0; h < kHands; ++h) {
    const auto th = theta[h].data();
    const auto wr = wrist[h].data();
    for (std::size_t t = 0; t < valid.size(); ++t) {
      HandPose& p = m.frames[t][h];
      for (int j = 0; j < kJoints; ++j) {
        for (int c = 0; c < 6; ++c) p.theta[j][c] = th[(t * kJoints + j) * 6 + c];
      }
      p.wrist = Vec3(wr[t * 3], wr[t * 3 + 1], wr[t * 3 + 2]);
    }
  }
  return m;
}

}  // namespace

RefineObjective::RefineObjective(const RefineTargets& targets, double weight_3d)
    : skeleton_(BimanualSkeleton::default_template()), weight_3d_(weight_3d), targets_(targets) {
  if (!targets.keypoints2d || !targets.keypoint_valid || !targets.cameras || !targets.frame_valid) {
    throw std::invalid_argument("refine: 2D labels and cameras are required");
  }
  const std::size_t T = targets.cameras->size();
  frames_ = T;
  if (targets.keypoints2d->size() != T || targets.keypoint_valid->size() != T || targets.frame_valid->size() != T ||
      (targets.keypoints3d && targets.keypoints3d->size() != T)) {
    throw std::invalid_argument("refine: label arrays disagree in length");
  }
  std::vector<double> rt, off, fx, fy, px, py;
  for (const Camera& c : *targets.cameras) {
    const Mat3 Rt = c.R.transpose();
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) rt.push_back(Rt(r, k));
    }
    off.insert(off.end(), {c.t.x(), c.t.y(), c.t.z()});
    fx.push_back(c.K.fx);
    fy.push_back(c.K.fy);
    px.push_back(c.K.px);
    py.push_back(c.K.py);
  }
  R_t_ = Tensor::from({T, 3, 3}, rt);
  offset_ = Tensor::from({T, 1, 3}, off);
  fx_ = column(fx);
  fy_ = column(fy);
  px_ = column(px);
  py_ = column(py);

  std::vector<double> m3(T);
  for (std::size_t t = 0; t < T; ++t) m3[t] = (*targets.frame_valid)[t] ? 1.0 : 0.0;
  for (int h = 0; h < kHands; ++h) {
    std::vector<double> tgt, msk, t3;
    for (std::size_t t = 0; t < T; ++t) {
      for (int k = 0; k < kKeypoints; ++k) {
        const bool ok = (*targets.frame_valid)[t] && (*targets.keypoint_valid)[t][h][k];
        const Vec2& x = (*targets.keypoints2d)[t][h][k];
        tgt.insert(tgt.end(), {ok ? x.x() : 0.0, ok ? x.y() : 0.0});
        msk.push_back(ok ? 1.0 : 0.0);
        n2d_ += ok ? 1.0 : 0.0;
        if (targets.keypoints3d) {
          const Vec3& p = (*targets.keypoints3d)[t][h][k];
          t3.insert(t3.end(), {p.x(), p.y(), p.z()});
        }
      }
    }
    target2d_[h] = Tensor::from({T, kKeypoints, 2}, tgt);
    mask2d_[h] = Tensor::from({T, kKeypoints, 1}, msk);
    if (targets.keypoints3d) target3d_[h] = Tensor::from({T, kKeypoints, 3}, t3);
  }
  mask3d_ = Tensor::from({T, 1, 1}, m3);
  if (targets.keypoints3d) {
    for (double v : m3) n3d_ += v * kHands * kKeypoints;
  }
}

Tensor RefineObjective::operator()(const std::array<Tensor, kHands>& theta, const std::array<Tensor, kHands>& wrist) const {
  Tensor sq2d, sq3d;
  for (int h = 0; h < kHands; ++h) {
    const Tensor kp = forward_kinematics(skeleton_.hands[h], theta[h], wrist[h]);  // [T,21,3]
    const Tensor cam = matmul(kp, R_t_) + offset_;
    const Tensor z = slice(cam, 2, 2, 3);
    const Tensor u = slice(cam, 2, 0, 1) / z * fx_ + px_;
    const Tensor v = slice(cam, 2, 1, 2) / z * fy_ + py_;
    const Tensor err = sum(square(concat({u, v}, 2) - target2d_[h]) * mask2d_[h]);
    sq2d = h == 0 ? err : sq2d + err;
    if (n3d_ > 0.0 && weight_3d_ > 0.0) {
      const Tensor e3 = sum(square((kp - target3d_[h]) * 100.0) * mask3d_);
      sq3d = h == 0 ? e3 : sq3d + e3;
    }
  }
  Tensor loss = n2d_ > 0.0 ? sq2d * (1.0 / n2d_) : sq2d * 0.0;
  if (sq3d.defined()) loss = loss + sq3d * (weight_3d_ / n3d_);
  return loss;
}

double RefineObjective::mean_pixel_error(const MotionSequence& motion) const {
  const Keypoints3D kp = forward_kinematics(skeleton_, motion);
  double sum_err = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < frames_; ++t) {
    if (!(*targets_.frame_valid)[t]) continue;
    for (int h = 0; h < kHands; ++h) {
      for (int k = 0; k < kKeypoints; ++k) {
        if (!(*targets_.keypoint_valid)[t][h][k]) continue;
        const Vec3 c = (*targets_.cameras)[t].to_camera(kp[t][h][k]);
        const Camera& cam = (*targets_.cameras)[t];
        const Vec2 x(cam.K.fx * c.x() / c.z() + cam.K.px, cam.K.fy * c.y() / c.z() + cam.K.py);
        sum_err += (x - (*targets_.keypoints2d)[t][h][k]).norm();
        ++n;
      }
    }
  }
  return n ? sum_err / static_cast<double>(n) : 0.0;
}

RefineResult refine_reprojection(const MotionSequence& init, const RefineTargets& targets, const RefineConfig& cfg) {
  cfg.validate();
  const RefineObjective objective(targets, cfg.weight_3d);
  if (init.size() != objective.frames()) throw std::invalid_argument("refine: initial motion length differs from labels");
  if (!objective.has_labels()) throw std::invalid_argument("refine: no valid labels");

  std::array<Tensor, kHands> theta, wrist;
  split_motion(init, theta, wrist);
  std::vector<Tensor> params{theta[0], wrist[0], theta[1], wrist[1]};
  optim::GradientDescent gd(params, cfg.lr);

  RefineResult res;
  res.loss_trace.reserve(static_cast<std::size_t>(cfg.iters) + 1);
  double best = std::numeric_limits<double>::infinity();
  MotionSequence best_motion = init;
  for (int it = 0; it <= cfg.iters; ++it) {
    optim::zero_grad(params);
    const Tensor loss = objective(theta, wrist);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("refine: non-finite loss at iteration " + std::to_string(it));
    res.loss_trace.push_back(value);
    if (value < best) {
      best = value;
      res.best_iter = it;
      best_motion = join_motion(theta, wrist, init.valid);
    }
    if (it == cfg.iters) break;
    backward(loss);
    if (cfg.clip_per_tensor) {
      for (const Tensor& p : params) {
        std::vector<Tensor> one{p};
        optim::clip_grad_norm(one, cfg.clip);
      }
    } else {
      optim::clip_grad_norm(params, cfg.clip);
    }
    gd.step();
  }
  res.initial_loss = res.loss_trace.front();
  res.best_loss = best;
  res.motion = std::move(best_motion);
  res.initial_pixel_error = objective.mean_pixel_error(init);
  res.final_pixel_error = objective.mean_pixel_error(res.motion);
  return res;
}

}  // namespace bimanual
