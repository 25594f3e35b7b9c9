#include "bimanual/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace bimanual {

using nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kMinKeypointDepth = 0.05;
// Peak acceleration of a unit min-jerk profile over unit time.
constexpr double kMinJerkPeakAccel = 5.7735;

double min_jerk(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

const Mat3 kMirror = Vec3(-1.0, 1.0, 1.0).asDiagonal();

// Flexion angles (radians at curl 1) for the three joints of each finger.
const std::array<std::array<double, 3>, 5> kFlex = {{
    {70 * kDeg, 95 * kDeg, 60 * kDeg},  // index
    {70 * kDeg, 95 * kDeg, 60 * kDeg},  // middle
    {70 * kDeg, 95 * kDeg, 60 * kDeg},  // pinky
    {70 * kDeg, 95 * kDeg, 60 * kDeg},  // ring
    {30 * kDeg, 45 * kDeg, 60 * kDeg},  // thumb
}};

Vec3 flex_axis(int finger) { return finger == 4 ? Vec3(0.6, 0.8, 0.0) : Vec3(1.0, 0.0, 0.0); }

Camera make_camera(const Intrinsics& K, const Mat3& cam_to_world, const Vec3& center) {
  Camera c;
  c.K = K;
  c.R = cam_to_world.transpose();
  c.t = -(c.R * center);
  return c;
}

struct Smooth3 {
  Vec3 amp, freq, phase;

  static Smooth3 draw(double amplitude, Rng& rng) {
    Smooth3 s;
    for (int i = 0; i < 3; ++i) {
      s.amp[i] = amplitude * rng.uniform(0.5, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
      s.freq[i] = rng.uniform(0.3, 1.0);
      s.phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    return s;
  }

  // Zero at tau = 0.
  Vec3 at(double tau) const {
    Vec3 v;
    for (int i = 0; i < 3; ++i) {
      v[i] = amp[i] * (std::sin(2.0 * std::numbers::pi * freq[i] * tau + phase[i]) - std::sin(phase[i]));
    }
    return v;
  }
};

Mat3 hand_base_orientation(Handedness hand) {
  const double yaw = hand == Handedness::Left ? 20 * kDeg : -20 * kDeg;
  return rotation_y(yaw) * rotation_x(-60 * kDeg);
}

}  // namespace

std::string to_string(MotionFamily f) {
  switch (f) {
    case MotionFamily::Reach: return "reach";
    case MotionFamily::Lift: return "lift";
    case MotionFamily::Handoff: return "handoff";
    case MotionFamily::Idle: return "idle";
  }
  return "?";
}

DomainRanges DomainRanges::in_domain() {
  DomainRanges r;
  r.focal = {300, 550};
  r.object_x = {-0.03, 0.03};
  r.object_y = {0.04, 0.08};
  r.object_z = {0.48, 0.56};
  r.object_half_width = {0.08, 0.12};
  r.lift_height = {0.04, 0.07};
  r.start_x = {0.11, 0.15};
  r.start_y = {0.08, 0.12};
  r.start_z = {0.34, 0.38};
  r.duration = {0.60, 0.85};
  r.camera_rotation_deg = {1.0, 3.0};
  r.camera_translation = {0.005, 0.015};
  return r;
}

DomainRanges DomainRanges::held_out() {
  DomainRanges r;
  r.focal = {600, 750};
  r.object_x = {-0.03, 0.03};
  r.object_y = {0.085, 0.10};
  r.object_z = {0.44, 0.475};
  r.object_half_width = {0.06, 0.075};
  r.lift_height = {0.075, 0.09};
  r.start_x = {0.08, 0.105};
  r.start_y = {0.06, 0.075};
  r.start_z = {0.385, 0.41};
  r.duration = {0.45, 0.58};
  r.camera_rotation_deg = {3.5, 5.0};
  r.camera_translation = {0.018, 0.028};
  return r;
}

json DomainRanges::to_json() const {
  return {{"focal", range_json(focal)},
          {"object_x", range_json(object_x)},
          {"object_y", range_json(object_y)},
          {"object_z", range_json(object_z)},
          {"object_half_width", range_json(object_half_width)},
          {"lift_height", range_json(lift_height)},
          {"start_x", range_json(start_x)},
          {"start_y", range_json(start_y)},
          {"start_z", range_json(start_z)},
          {"duration", range_json(duration)},
          {"camera_rotation_deg", range_json(camera_rotation_deg)},
          {"camera_translation", range_json(camera_translation)}};
}

void MotionGeneratorConfig::validate() const {
  double total = 0.0;
  for (double w : family_weights) {
    if (w < 0.0) throw std::invalid_argument("generator: family weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("generator: family weights must sum to 1");
  if (horizon < 4) throw std::invalid_argument("generator: horizon must be at least 4");
  if (image_width <= 0 || image_height <= 0) throw std::invalid_argument("generator: image size must be positive");
  if (!(max_wrist_accel > 0.0)) throw std::invalid_argument("generator: max_wrist_accel must be positive");
  if (truncate_prob < 0.0 || truncate_prob > 1.0 || min_length_fraction <= 0.0 || min_length_fraction > 1.0) {
    throw std::invalid_argument("generator: truncation settings out of range");
  }
  if (start_jitter < 0.0 || articulation_noise_deg < 0.0) throw std::invalid_argument("generator: noise must be >= 0");
  for (const Range* r : {&ranges.focal, &ranges.object_half_width, &ranges.duration, &ranges.start_z,
                         &ranges.object_z}) {
    if (!(r->lo > 0.0) || r->hi < r->lo) throw std::invalid_argument("generator: ranges must be positive");
  }
  if (ranges.duration.hi > 0.9) throw std::invalid_argument("generator: duration fraction must be <= 0.9");
}

json MotionGeneratorConfig::to_json() const {
  return {{"family_weights", {{"reach", family_weights[0]}, {"lift", family_weights[1]},
                              {"handoff", family_weights[2]}, {"idle", family_weights[3]}}},
          {"horizon", horizon},
          {"image_width", image_width},
          {"image_height", image_height},
          {"domain", bimanual::to_string(domain)},
          {"ranges", ranges.to_json()},
          {"start_jitter", start_jitter},
          {"articulation_noise_deg", articulation_noise_deg},
          {"max_wrist_accel", max_wrist_accel},
          {"truncate_prob", truncate_prob},
          {"min_length_fraction", min_length_fraction},
          {"bimodal", bimodal},
          {"seed", seed}};
}

MotionGeneratorConfig MotionGeneratorConfig::from_json(const json& j) {
  static const std::set<std::string> known = {"family_weights", "horizon",        "image_width",
                                              "image_height",   "domain",         "ranges",
                                              "start_jitter",   "articulation_noise_deg", "max_wrist_accel",
                                              "truncate_prob",  "min_length_fraction",    "bimodal",
                                              "seed"};
  if (!j.is_object()) throw std::invalid_argument("generator config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown generator config key '" + key + "'");
  }
  MotionGeneratorConfig c;
  if (j.contains("domain")) c.domain = parse_domain(j.at("domain").get<std::string>());
  c.ranges = c.domain == Domain::InDomain ? DomainRanges::in_domain() : DomainRanges::held_out();
  if (j.contains("family_weights")) {
    const auto& w = j.at("family_weights");
    static const std::array<const char*, kFamilies> names = {"reach", "lift", "handoff", "idle"};
    for (const auto& [key, value] : w.items()) {
      if (std::find_if(names.begin(), names.end(), [&](const char* n) { return key == n; }) == names.end()) {
        throw std::invalid_argument("unknown motion family '" + key + "'");
      }
    }
    for (int f = 0; f < kFamilies; ++f) c.family_weights[f] = w.value(names[f], 0.0);
  }
  if (j.contains("ranges")) {
    const auto& r = j.at("ranges");
    const std::vector<std::pair<const char*, Range*>> fields = {
        {"focal", &c.ranges.focal},
        {"object_x", &c.ranges.object_x},
        {"object_y", &c.ranges.object_y},
        {"object_z", &c.ranges.object_z},
        {"object_half_width", &c.ranges.object_half_width},
        {"lift_height", &c.ranges.lift_height},
        {"start_x", &c.ranges.start_x},
        {"start_y", &c.ranges.start_y},
        {"start_z", &c.ranges.start_z},
        {"duration", &c.ranges.duration},
        {"camera_rotation_deg", &c.ranges.camera_rotation_deg},
        {"camera_translation", &c.ranges.camera_translation}};
    for (const auto& [key, value] : r.items()) {
      auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return key == f.first; });
      if (it == fields.end()) throw std::invalid_argument("unknown range '" + key + "'");
      if (!value.is_array() || value.size() != 2) throw std::invalid_argument("range '" + key + "' must be [lo, hi]");
      *it->second = {value[0].get<double>(), value[1].get<double>()};
    }
  }
  c.horizon = j.value("horizon", c.horizon);
  c.image_width = j.value("image_width", c.image_width);
  c.image_height = j.value("image_height", c.image_height);
  c.start_jitter = j.value("start_jitter", c.start_jitter);
  c.articulation_noise_deg = j.value("articulation_noise_deg", c.articulation_noise_deg);
  c.max_wrist_accel = j.value("max_wrist_accel", c.max_wrist_accel);
  c.truncate_prob = j.value("truncate_prob", c.truncate_prob);
  c.min_length_fraction = j.value("min_length_fraction", c.min_length_fraction);
  c.bimodal = j.value("bimodal", c.bimodal);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

void apply_curl(HandPose& pose, const std::array<double, 5>& curl, Handedness hand,
                const std::array<Mat3, kJoints>* bias) {
  for (int f = 0; f < 5; ++f) {
    for (int k = 0; k < 3; ++k) {
      const int j = 1 + 3 * f + k;
      Mat3 R = axis_angle_to_matrix(flex_axis(f).normalized() * (kFlex[f][k] * curl[f]));
      if (bias) R = (*bias)[j] * R;
      if (hand == Handedness::Left) R = kMirror * R * kMirror;
      pose.set_rotation(j, R);
    }
  }
}

void project_keypoints(const Keypoints3D& kp3d, const std::vector<Camera>& cameras, int width, int height,
                       Keypoints2D& kp2d, std::vector<KeypointFlags>& valid) {
  if (kp3d.size() != cameras.size()) throw std::invalid_argument("project_keypoints: frame count mismatch");
  kp2d.assign(kp3d.size(), FrameKeypoints2D{});
  valid.assign(kp3d.size(), KeypointFlags{});
  for (std::size_t t = 0; t < kp3d.size(); ++t) {
    for (int h = 0; h < kHands; ++h) {
      for (int k = 0; k < kKeypoints; ++k) {
        const Vec3 Xc = cameras[t].to_camera(kp3d[t][h][k]);
        Vec2 x(0.0, 0.0);
        bool ok = Xc.z() > kMinKeypointDepth;
        if (ok) {
          x = project(cameras[t], kp3d[t][h][k]);
          ok = x.x() >= 0.0 && x.x() < width && x.y() >= 0.0 && x.y() < height;
        }
        kp2d[t][h][k] = ok ? x : Vec2(0.0, 0.0);
        valid[t][h][k] = ok ? 1 : 0;
      }
    }
  }
}

namespace {

struct HandPlan {
  Vec3 start, end;
  double curl_start = 0.1, curl_end = 0.1;
  Vec3 turn = Vec3::Zero();  // local axis-angle reached at the end of the movement
  Mat3 base = Mat3::Identity();
};

}  // namespace

TrajectoryRecord generate_record(const MotionGeneratorConfig& cfg, std::size_t index) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, index));
  const DomainRanges& R = cfg.ranges;
  const int H = cfg.horizon;
  const bool bimodal = cfg.bimodal;

  MotionFamily family = MotionFamily::Reach;
  if (!bimodal) {
    double u = rng.uniform(), acc = 0.0;
    for (int f = 0; f < kFamilies; ++f) {
      acc += cfg.family_weights[f];
      if (u < acc || f == kFamilies - 1) {
        family = static_cast<MotionFamily>(f);
        break;
      }
    }
  }

  // Fixed t=0 scene for the bimodal subset comes from a seed-independent stream.
  Rng scene_rng = bimodal ? Rng(mix_seed(cfg.seed, 0x5eedULL)) : rng.derive(1);
  const auto mid = [](const Range& r) { return 0.5 * (r.lo + r.hi); };

  Intrinsics K;
  const double focal = bimodal ? mid(R.focal) : R.focal.sample(scene_rng);
  K.fx = focal;
  K.fy = focal * (bimodal ? 1.0 : scene_rng.uniform(0.98, 1.02));
  K.px = cfg.image_width / 2.0 + (bimodal ? 0.0 : scene_rng.uniform(-8.0, 8.0));
  K.py = cfg.image_height / 2.0 + (bimodal ? 0.0 : scene_rng.uniform(-6.0, 6.0));

  std::array<Vec3, kHands> start;
  for (int h = 0; h < kHands; ++h) {
    const double sign = h == 0 ? -1.0 : 1.0;
    if (bimodal) {
      start[h] = Vec3(sign * mid(R.start_x), mid(R.start_y), mid(R.start_z));
    } else {
      start[h] = Vec3(sign * R.start_x.sample(scene_rng), R.start_y.sample(scene_rng), R.start_z.sample(scene_rng));
    }
  }

  Vec3 object;
  double half_width, lift_height = 0.0;
  int branch = -1;
  if (bimodal) {
    branch = static_cast<int>(rng.index(2));
    object = Vec3(branch == 0 ? -0.09 : 0.09, mid(R.object_y), mid(R.object_z));
    half_width = mid(R.object_half_width);
  } else {
    object = Vec3(R.object_x.sample(rng), R.object_y.sample(rng), R.object_z.sample(rng));
    half_width = R.object_half_width.sample(rng);
    lift_height = R.lift_height.sample(rng);
  }
  double duration = bimodal ? mid(R.duration) : R.duration.sample(rng);
  double onset = bimodal ? 0.05 : rng.uniform(0.0, 0.1);

  std::array<HandPlan, kHands> plan;
  for (int h = 0; h < kHands; ++h) {
    plan[h].base = hand_base_orientation(static_cast<Handedness>(h)) *
                   axis_angle_to_matrix(Vec3(scene_rng.normal(), scene_rng.normal(), scene_rng.normal()) *
                                        (bimodal ? 0.0 : 5.0 * kDeg));
  }
  const std::array<Vec3, kHands> grasp = {object - Vec3(half_width, 0, 0), object + Vec3(half_width, 0, 0)};
  switch (family) {
    case MotionFamily::Reach:
      for (int h = 0; h < kHands; ++h) {
        plan[h].start = start[h];
        plan[h].end = grasp[h];
        plan[h].curl_start = 0.1;
        plan[h].curl_end = 0.7;
        plan[h].turn = Vec3(0, 25 * kDeg, 0);
      }
      break;
    case MotionFamily::Lift:
      for (int h = 0; h < kHands; ++h) {
        plan[h].start = grasp[h];
        plan[h].end = grasp[h] + Vec3(0, -lift_height, -0.03);
        plan[h].curl_start = plan[h].curl_end = 0.75;
        plan[h].turn = Vec3(15 * kDeg, 0, 0);
      }
      break;
    case MotionFamily::Handoff: {
      const Vec3 meet(object.x(), object.y() - 0.04, object.z() - 0.06);
      plan[0].start = start[0];
      plan[0].end = meet - Vec3(0.035, 0, 0);
      plan[0].curl_start = 0.1;
      plan[0].curl_end = 0.7;
      plan[0].turn = Vec3(0, 0, 20 * kDeg);
      plan[1].start = grasp[1];
      plan[1].end = meet + Vec3(0.035, 0, 0);
      plan[1].curl_start = 0.75;
      plan[1].curl_end = 0.2;
      plan[1].turn = Vec3(0, -40 * kDeg, 0);
      break;
    }
    case MotionFamily::Idle:
      for (int h = 0; h < kHands; ++h) {
        plan[h].start = start[h];
        plan[h].end = start[h] + Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.008;
        plan[h].curl_start = plan[h].curl_end = 0.35;
        plan[h].turn = Vec3(rng.normal(), rng.normal(), rng.normal()) * (3 * kDeg);
      }
      break;
  }
  if (!bimodal && family != MotionFamily::Idle) {
    for (auto& p : plan) {
      for (int c = 0; c < 3; ++c) p.start[c] += rng.normal() * cfg.start_jitter * 0.5;
    }
  }

  // Enforce the acceleration bound by stretching the movement when needed.
  double dist = 0.0;
  for (const auto& p : plan) dist = std::max(dist, (p.end - p.start).norm());
  const double frames_needed = std::sqrt(kMinJerkPeakAccel * dist / cfg.max_wrist_accel) * 1.05;
  duration = std::max(duration, frames_needed / (H - 1));
  if (duration > 1.0) throw std::runtime_error("generator: horizon too short for the acceleration bound");
  onset = std::min(onset, 1.0 - duration);

  std::array<Mat3, kJoints> bias[kHands];
  for (int h = 0; h < kHands; ++h) {
    for (int j = 0; j < kJoints; ++j) {
      const double s = bimodal ? 0.0 : cfg.articulation_noise_deg * kDeg;
      bias[h][j] = axis_angle_to_matrix(Vec3(scene_rng.normal() * 0.3, scene_rng.normal() * 0.3, scene_rng.normal()) * s);
    }
  }

  TrajectoryRecord rec;
  rec.id = std::string(cfg.domain == Domain::InDomain ? "in" : "ho") + (bimodal ? "-bi-" : "-") + std::to_string(index);
  rec.tier = Tier::Full3d;
  rec.domain = cfg.domain;
  rec.image_width = cfg.image_width;
  rec.image_height = cfg.image_height;

  MotionSequence seq;
  seq.resize(static_cast<std::size_t>(H));
  std::size_t length = static_cast<std::size_t>(H);
  if (!bimodal && rng.bernoulli(cfg.truncate_prob)) {
    length = static_cast<std::size_t>(std::lround(rng.uniform(cfg.min_length_fraction, 1.0) * H));
    length = std::clamp<std::size_t>(length, 2, static_cast<std::size_t>(H));
  }
  for (int t = 0; t < H; ++t) {
    const double tau = static_cast<double>(t) / (H - 1);
    const double s = min_jerk((tau - onset) / duration);
    const double grip = smoothstep((s - 0.6) / 0.4);
    for (int h = 0; h < kHands; ++h) {
      const HandPlan& p = plan[h];
      HandPose& pose = seq.frames[static_cast<std::size_t>(t)][h];
      pose.wrist = p.start + s * (p.end - p.start);
      pose.set_rotation(0, p.base * axis_angle_to_matrix(p.turn * s));
      const double c = p.curl_start + grip * (p.curl_end - p.curl_start);
      apply_curl(pose, {c, c, c, c, 0.7 * c}, static_cast<Handedness>(h), &bias[h]);
    }
    seq.valid[static_cast<std::size_t>(t)] = static_cast<std::size_t>(t) < length ? 1 : 0;
  }

  // Egocentric head motion; the first camera defines the world frame.
  const double rot_amp = (bimodal ? mid(R.camera_rotation_deg) : R.camera_rotation_deg.sample(rng)) * kDeg;
  const double trans_amp = bimodal ? mid(R.camera_translation) : R.camera_translation.sample(rng);
  const Smooth3 rot = Smooth3::draw(rot_amp, rng);
  const Smooth3 trans = Smooth3::draw(trans_amp, rng);
  for (int t = 0; t < H; ++t) {
    const double tau = static_cast<double>(t) / (H - 1);
    rec.cameras.push_back(make_camera(K, axis_angle_to_matrix(rot.at(tau)), trans.at(tau)));
  }

  static const BimanualSkeleton skeleton = BimanualSkeleton::default_template();
  const Keypoints3D kp3d = forward_kinematics(skeleton, seq);
  project_keypoints(kp3d, rec.cameras, cfg.image_width, cfg.image_height, rec.keypoints2d, rec.keypoint_valid);
  rec.frame_valid = seq.valid;
  rec.keypoints3d = kp3d;
  rec.motion = std::move(seq);

  rec.generator_params = {{"family", to_string(family)},
                          {"domain", to_string(cfg.domain)},
                          {"index", index},
                          {"seed", cfg.seed},
                          {"bimodal", bimodal},
                          {"branch", branch},
                          {"focal", focal},
                          {"object", {object.x(), object.y(), object.z()}},
                          {"object_half_width", half_width},
                          {"lift_height", lift_height},
                          {"duration", duration},
                          {"onset", onset},
                          {"camera_rotation_deg", rot_amp / kDeg},
                          {"camera_translation", trans_amp},
                          {"length", length}};
  return rec;
}

std::vector<TrajectoryRecord> generate_dataset(const MotionGeneratorConfig& cfg, std::size_t n,
                                               std::size_t first_index) {
  std::vector<TrajectoryRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_record(cfg, first_index + i));
  return out;
}

TrajectoryRecord camera_augment(const TrajectoryRecord& record, const CameraAugmentConfig& cfg, Rng& rng) {
  if (!record.keypoints3d) throw std::invalid_argument("camera_augment: record " + record.id + " has no 3D keypoints");
  const std::size_t T = record.frames();

  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    const Vec3 shift(rng.uniform(-cfg.shift_xy, cfg.shift_xy), rng.uniform(-cfg.shift_xy, cfg.shift_xy),
                     rng.uniform(-cfg.shift_z, cfg.shift_z));
    const Vec3 drift(rng.uniform(-cfg.drift_xy, cfg.drift_xy), rng.uniform(-cfg.drift_xy, cfg.drift_xy),
                     rng.uniform(-cfg.drift_z, cfg.drift_z));
    std::vector<Vec3> offset(T);
    for (std::size_t t = 0; t < T; ++t) {
      offset[t] = shift + drift * (T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.0);
    }
    Keypoints3D kp3d = *record.keypoints3d;
    for (std::size_t t = 0; t < T; ++t) {
      for (auto& hand : kp3d[t]) {
        for (auto& p : hand) p += offset[t];
      }
    }
    Vec3 pivot = Vec3::Zero();
    for (int h = 0; h < kHands; ++h) pivot += kp3d[0][h][0] / kHands;
    const Smooth3 orbit = Smooth3::draw(cfg.orbit_deg * kDeg, rng);
    const Vec3 drift_axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    const double focal = 1.0 + rng.uniform(-cfg.focal_scale, cfg.focal_scale);
    std::vector<Camera> cams(T);
    bool ok = true;
    for (std::size_t t = 0; t < T && ok; ++t) {
      const double tau = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.0;
      const Camera& c = record.cameras[t];
      const Mat3 Q = axis_angle_to_matrix(orbit.at(tau));
      const Mat3 D = axis_angle_to_matrix(drift_axis * (cfg.drift_deg * kDeg * tau));
      const Vec3 center = c.center();
      const Vec3 moved = center + (Q - Mat3::Identity()) * (center - pivot);
      Intrinsics K = c.K;
      K.fx *= focal;
      K.fy *= focal;
      cams[t] = make_camera(K, Q * c.R.transpose() * D, moved);
      if ((Q - Mat3::Identity()).isZero(0.0) && (D - Mat3::Identity()).isZero(0.0)) {
        cams[t].R = c.R;
        cams[t].t = c.t;
      }
      for (int h = 0; h < kHands && ok; ++h) {
        for (int k = 0; k < kKeypoints && ok; ++k) ok = cams[t].to_camera(kp3d[t][h][k]).z() > kMinKeypointDepth;
      }
    }
    if (!ok) continue;
    TrajectoryRecord out = record;
    out.cameras = std::move(cams);
    project_keypoints(kp3d, out.cameras, out.image_width, out.image_height, out.keypoints2d, out.keypoint_valid);
    for (int h = 0; h < kHands; ++h) {
      for (int k = 0; k < kKeypoints; ++k) ok = ok && (out.keypoint_valid[0][h][k] || !record.keypoint_valid[0][h][k]);
    }
    if (!ok) continue;
    if (out.motion) {
      for (std::size_t t = 0; t < out.motion->size(); ++t) {
        for (int h = 0; h < kHands; ++h) out.motion->frames[t][h].wrist += offset[t];
      }
    }
    out.keypoints3d = std::move(kp3d);
    return out;
  }
  throw std::runtime_error("camera_augment: hands fall behind the camera for record " + record.id);
}

TrajectoryRecord degrade_tier(const TrajectoryRecord& record, Tier target, const DegradeConfig& cfg, Rng& rng) {
  if (target == Tier::Imputed) throw std::invalid_argument("degrade_tier: imputed is not a degradation target");
  if (tier_rank(target) > tier_rank(record.tier)) {
    throw std::invalid_argument("degrade_tier: cannot raise " + to_string(record.tier) + " to " + to_string(target));
  }
  TrajectoryRecord out = record;
  out.tier = target;
  if (target != Tier::Full3d) out.motion.reset();
  if (target == Tier::Kp2dOnly) {
    out.keypoints3d.reset();
    for (std::size_t t = 0; t < out.frames(); ++t) {
      const double scale = 1.0 + rng.uniform(-cfg.scale_jitter, cfg.scale_jitter);
      Vec2 centroid = Vec2::Zero();
      int n = 0;
      for (int h = 0; h < kHands; ++h) {
        for (int k = 0; k < kKeypoints; ++k) {
          if (out.keypoint_valid[t][h][k]) {
            centroid += out.keypoints2d[t][h][k];
            ++n;
          }
        }
      }
      if (n > 0) centroid /= n;
      for (int h = 0; h < kHands; ++h) {
        for (int k = 0; k < kKeypoints; ++k) {
          if (!out.keypoint_valid[t][h][k]) continue;
          Vec2& x = out.keypoints2d[t][h][k];
          x = centroid + scale * (x - centroid) + Vec2(rng.normal(), rng.normal()) * cfg.jitter_sigma;
        }
      }
    }
    out.generator_params["degrade"] = {{"jitter_sigma", cfg.jitter_sigma}, {"scale_jitter", cfg.scale_jitter}};
  }
  return out;
}

double max_wrist_acceleration(const MotionSequence& seq) {
  double worst = 0.0;
  for (std::size_t t = 2; t < seq.size(); ++t) {
    if (!seq.is_valid(t) || !seq.is_valid(t - 1) || !seq.is_valid(t - 2)) continue;
    for (int h = 0; h < kHands; ++h) {
      const Vec3 a = seq.frames[t][h].wrist - 2.0 * seq.frames[t - 1][h].wrist + seq.frames[t - 2][h].wrist;
      worst = std::max(worst, a.norm());
    }
  }
  return worst;
}

}  // namespace bimanual
