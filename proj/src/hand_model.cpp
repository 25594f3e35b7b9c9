#include "bimanual/hand_model.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "bimanual/ops.hpp"

namespace bimanual {

using nlohmann::json;

void HandSkeleton::validate() const {
  if (parent[0] != -1) throw std::invalid_argument("HandSkeleton: joint 0 must be the root");
  for (int j = 1; j < kJoints; ++j) {
    if (parent[j] < 0 || parent[j] >= j) throw std::invalid_argument("HandSkeleton: parents must precede children");
    if (!(offsets[j].norm() > 0.0)) throw std::invalid_argument("HandSkeleton: bone lengths must be positive");
  }
  for (int k = 0; k < kTips; ++k) {
    if (tip_parent[k] < 1 || tip_parent[k] >= kJoints) throw std::invalid_argument("HandSkeleton: bad tip parent");
    if (!(tip_offsets[k].norm() > 0.0)) throw std::invalid_argument("HandSkeleton: tip lengths must be positive");
  }
}

double HandSkeleton::bone_length(int keypoint) const {
  return keypoint < kJoints ? offsets[keypoint].norm() : tip_offsets[keypoint - kJoints].norm();
}

int HandSkeleton::keypoint_parent(int k) const { return k < kJoints ? parent[k] : tip_parent[k - kJoints]; }

namespace {

HandSkeleton right_template() {
  HandSkeleton s;
  s.handedness = Handedness::Right;
  s.parent = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14};
  // Fingers point along -y (image up) with the palm facing the camera (-z).
  const std::array<Vec3, 5> base = {Vec3(0.022, -0.085, 0.0), Vec3(0.0, -0.090, 0.0), Vec3(-0.036, -0.075, 0.0),
                                    Vec3(-0.019, -0.084, 0.0), Vec3(0.030, -0.025, 0.008)};
  const std::array<std::array<Vec3, 3>, 5> segs = {{
      {Vec3(0.0, -0.040, 0.0), Vec3(0.0, -0.025, 0.0), Vec3(0.0, -0.022, 0.0)},        // index
      {Vec3(0.0, -0.045, 0.0), Vec3(0.0, -0.028, 0.0), Vec3(0.0, -0.024, 0.0)},        // middle
      {Vec3(0.0, -0.032, 0.0), Vec3(0.0, -0.020, 0.0), Vec3(0.0, -0.019, 0.0)},        // pinky
      {Vec3(0.0, -0.041, 0.0), Vec3(0.0, -0.026, 0.0), Vec3(0.0, -0.022, 0.0)},        // ring
      {Vec3(0.022, -0.022, 0.0), Vec3(0.018, -0.016, 0.0), Vec3(0.016, -0.013, 0.0)},  // thumb
  }};
  s.offsets[0] = Vec3::Zero();
  for (int f = 0; f < 5; ++f) {
    s.offsets[1 + 3 * f] = base[f];
    s.offsets[2 + 3 * f] = segs[f][0];
    s.offsets[3 + 3 * f] = segs[f][1];
  }
  // tips: thumb, index, middle, ring, pinky
  const std::array<int, 5> finger_of_tip = {4, 0, 1, 3, 2};
  for (int k = 0; k < kTips; ++k) {
    const int f = finger_of_tip[k];
    s.tip_parent[k] = 3 + 3 * f;
    s.tip_offsets[k] = segs[f][2];
  }
  return s;
}

HandSkeleton mirrored(const HandSkeleton& right) {
  HandSkeleton left = right;
  left.handedness = Handedness::Left;
  for (auto& o : left.offsets) o.x() = -o.x();
  for (auto& o : left.tip_offsets) o.x() = -o.x();
  return left;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("hand template: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json hand_json(const HandSkeleton& s) {
  json j;
  j["parent"] = s.parent;
  j["tip_parent"] = s.tip_parent;
  j["offsets"] = json::array();
  for (const auto& o : s.offsets) j["offsets"].push_back(vec_json(o));
  j["tip_offsets"] = json::array();
  for (const auto& o : s.tip_offsets) j["tip_offsets"].push_back(vec_json(o));
  return j;
}

HandSkeleton hand_from_json(const json& j, Handedness h) {
  HandSkeleton s;
  s.handedness = h;
  const auto parent = j.at("parent").get<std::vector<int>>();
  const auto tip_parent = j.at("tip_parent").get<std::vector<int>>();
  const auto& offsets = j.at("offsets");
  const auto& tips = j.at("tip_offsets");
  if (parent.size() != kJoints || offsets.size() != kJoints || tip_parent.size() != kTips || tips.size() != kTips) {
    throw std::invalid_argument("hand template: expected 16 joints and 5 fingertips");
  }
  for (int i = 0; i < kJoints; ++i) {
    s.parent[i] = parent[i];
    s.offsets[i] = json_vec(offsets[i]);
  }
  for (int i = 0; i < kTips; ++i) {
    s.tip_parent[i] = tip_parent[i];
    s.tip_offsets[i] = json_vec(tips[i]);
  }
  s.validate();
  return s;
}

}  // namespace

BimanualSkeleton BimanualSkeleton::default_template() {
  BimanualSkeleton b;
  b.hands[1] = right_template();
  b.hands[0] = mirrored(b.hands[1]);
  return b;
}

BimanualSkeleton BimanualSkeleton::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  BimanualSkeleton b;
  b.hands[1] = hand_from_json(j.at("right"), Handedness::Right);
  b.hands[0] = j.contains("left") ? hand_from_json(j.at("left"), Handedness::Left) : mirrored(b.hands[1]);
  return b;
}

BimanualSkeleton BimanualSkeleton::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open hand template " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string BimanualSkeleton::to_json_text() const {
  json j;
  j["left"] = hand_json(hands[0]);
  j["right"] = hand_json(hands[1]);
  return j.dump(2);
}

HandPose HandPose::identity() {
  HandPose p;
  p.theta.fill(Rot6D{1, 0, 0, 0, 1, 0});
  return p;
}

std::size_t MotionSequence::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v ? 1 : 0;
  return n;
}

void MotionSequence::resize(std::size_t n) {
  frames.resize(n, FramePose{HandPose::identity(), HandPose::identity()});
  valid.resize(n, 1);
}

HandKeypoints3D forward_kinematics(const HandSkeleton& skeleton, const HandPose& pose) {
  std::array<Mat3, kJoints> global;
  HandKeypoints3D kp;
  global[0] = pose.rotation(0);
  kp[0] = pose.wrist;
  for (int j = 1; j < kJoints; ++j) {
    const int p = skeleton.parent[j];
    kp[j] = kp[p] + global[p] * skeleton.offsets[j];
    global[j] = global[p] * pose.rotation(j);
  }
  for (int k = 0; k < kTips; ++k) {
    const int p = skeleton.tip_parent[k];
    kp[kJoints + k] = kp[p] + global[p] * skeleton.tip_offsets[k];
  }
  return kp;
}

Keypoints3D forward_kinematics(const BimanualSkeleton& skeleton, const MotionSequence& seq) {
  Keypoints3D out(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    for (int h = 0; h < kHands; ++h) out[t][h] = forward_kinematics(skeleton.hands[h], seq.frames[t][h]);
  }
  return out;
}

Tensor forward_kinematics(const HandSkeleton& skeleton, const Tensor& rot6d, const Tensor& wrist) {
  if (rot6d.dim() != 3 || rot6d.size(1) != kJoints || rot6d.size(2) != 6) {
    throw std::invalid_argument("forward_kinematics: rot6d must be [N,16,6], got " + shape_str(rot6d.shape()));
  }
  const std::size_t n = rot6d.size(0);
  if (wrist.shape() != Shape{n, 3}) {
    throw std::invalid_argument("forward_kinematics: wrist must be [N,3], got " + shape_str(wrist.shape()));
  }
  const Tensor R = rot6d_to_matrix(rot6d);  // [N,16,3,3]
  const auto local = [&](int j) { return reshape(slice(R, 1, j, j + 1), {n, 3, 3}); };
  const auto offset = [](const Vec3& v) { return Tensor::from({3, 1}, {v.x(), v.y(), v.z()}); };

  std::vector<Tensor> global(kJoints);
  std::vector<Tensor> kp(kKeypoints);
  global[0] = local(0);
  kp[0] = wrist;
  for (int j = 1; j < kJoints; ++j) {
    const int p = skeleton.parent[j];
    kp[j] = kp[p] + reshape(matmul(global[p], offset(skeleton.offsets[j])), {n, 3});
    global[j] = matmul(global[p], local(j));
  }
  for (int k = 0; k < kTips; ++k) {
    const int p = skeleton.tip_parent[k];
    kp[kJoints + k] = kp[p] + reshape(matmul(global[p], offset(skeleton.tip_offsets[k])), {n, 3});
  }
  return stack(kp, 1);
}

TokenMatrix pack_tokens(const MotionSequence& seq) {
  TokenMatrix tokens(static_cast<long>(seq.size()), kTokenDim);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    for (int h = 0; h < kHands; ++h) {
      const HandPose& p = seq.frames[t][h];
      const long base = h * kHandTokenDim;
      for (int j = 0; j < kJoints; ++j) {
        for (int c = 0; c < 6; ++c) tokens(static_cast<long>(t), base + j * 6 + c) = p.theta[j][c];
      }
      for (int c = 0; c < 3; ++c) tokens(static_cast<long>(t), base + kJoints * 6 + c) = p.wrist[c];
    }
  }
  return tokens;
}

MotionSequence unpack_tokens(const TokenMatrix& tokens) {
  return unpack_tokens(tokens, std::vector<std::uint8_t>(static_cast<std::size_t>(tokens.rows()), 1));
}

MotionSequence unpack_tokens(const TokenMatrix& tokens, const std::vector<std::uint8_t>& valid) {
  if (tokens.cols() != kTokenDim) {
    throw std::invalid_argument("unpack_tokens: expected width 198, got " + std::to_string(tokens.cols()));
  }
  if (valid.size() != static_cast<std::size_t>(tokens.rows())) throw std::invalid_argument("unpack_tokens: mask length mismatch");
  MotionSequence seq;
  seq.frames.resize(valid.size());
  seq.valid = valid;
  for (std::size_t t = 0; t < valid.size(); ++t) {
    for (int h = 0; h < kHands; ++h) {
      HandPose& p = seq.frames[t][h];
      const long base = h * kHandTokenDim;
      for (int j = 0; j < kJoints; ++j) {
        for (int c = 0; c < 6; ++c) p.theta[j][c] = tokens(static_cast<long>(t), base + j * 6 + c);
      }
      for (int c = 0; c < 3; ++c) p.wrist[c] = tokens(static_cast<long>(t), base + kJoints * 6 + c);
    }
  }
  return seq;
}

}  // namespace bimanual
