#include "bimanual/dataset_io.hpp"

#include <cstring>
#include <stdexcept>

#include "bimanual/checkpoint.hpp"

namespace bimanual {

using nlohmann::json;

namespace {

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 to_vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("dataset: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json motion_json(const MotionSequence& m) {
  json frames = json::array();
  for (const auto& f : m.frames) {
    json hands = json::array();
    for (const auto& p : f) {
      json h = json::array();
      for (const auto& r : p.theta) {
        for (double v : r) h.push_back(v);
      }
      for (int c = 0; c < 3; ++c) h.push_back(p.wrist[c]);
      hands.push_back(std::move(h));
    }
    frames.push_back(std::move(hands));
  }
  return {{"frames", std::move(frames)}, {"valid", m.valid}};
}

MotionSequence motion_from_json(const json& j) {
  MotionSequence m;
  const auto& frames = j.at("frames");
  m.frames.resize(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].size() != kHands) throw std::invalid_argument("dataset: motion frame needs two hands");
    for (int h = 0; h < kHands; ++h) {
      const auto& v = frames[t][h];
      if (v.size() != kHandTokenDim) throw std::invalid_argument("dataset: hand pose needs 99 numbers");
      HandPose& p = m.frames[t][h];
      for (int k = 0; k < kJoints; ++k) {
        for (int c = 0; c < 6; ++c) p.theta[k][c] = v[k * 6 + c].get<double>();
      }
      for (int c = 0; c < 3; ++c) p.wrist[c] = v[kJoints * 6 + c].get<double>();
    }
  }
  m.valid = j.at("valid").get<std::vector<std::uint8_t>>();
  return m;
}

}  // namespace

json record_to_json(const TrajectoryRecord& r) {
  json j;
  j["id"] = r.id;
  j["tier"] = to_string(r.tier);
  j["domain"] = to_string(r.domain);
  j["image_width"] = r.image_width;
  j["image_height"] = r.image_height;
  if (r.motion) j["motion"] = motion_json(*r.motion);
  if (r.keypoints3d) {
    json kp = json::array();
    for (const auto& f : *r.keypoints3d) {
      json hands = json::array();
      for (const auto& h : f) {
        json pts = json::array();
        for (const auto& x : h) pts.push_back(vec(x));
        hands.push_back(std::move(pts));
      }
      kp.push_back(std::move(hands));
    }
    j["keypoints3d"] = std::move(kp);
  }
  json cams = json::array();
  for (const auto& c : r.cameras) {
    json R = json::array();
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) R.push_back(c.R(a, b));
    }
    cams.push_back({{"K", {c.K.fx, c.K.fy, c.K.px, c.K.py}}, {"R", std::move(R)}, {"t", vec(c.t)}});
  }
  j["cameras"] = std::move(cams);
  json kp2 = json::array();
  for (const auto& f : r.keypoints2d) {
    json hands = json::array();
    for (const auto& h : f) {
      json pts = json::array();
      for (const auto& x : h) pts.push_back(json::array({x.x(), x.y()}));
      hands.push_back(std::move(pts));
    }
    kp2.push_back(std::move(hands));
  }
  j["keypoints2d"] = std::move(kp2);
  json flags = json::array();
  for (const auto& f : r.keypoint_valid) flags.push_back(json::array({json(f[0]), json(f[1])}));
  j["keypoint_valid"] = std::move(flags);
  j["frame_valid"] = r.frame_valid;
  j["generator_params"] = r.generator_params;
  j["provenance"] = r.provenance;
  return j;
}

TrajectoryRecord record_from_json(const json& j) {
  TrajectoryRecord r;
  r.id = j.at("id").get<std::string>();
  r.tier = parse_tier(j.at("tier").get<std::string>());
  r.domain = parse_domain(j.at("domain").get<std::string>());
  r.image_width = j.value("image_width", r.image_width);
  r.image_height = j.value("image_height", r.image_height);
  if (j.contains("motion")) r.motion = motion_from_json(j.at("motion"));
  if (j.contains("keypoints3d")) {
    Keypoints3D kp;
    for (const auto& f : j.at("keypoints3d")) {
      FrameKeypoints3D frame;
      for (int h = 0; h < kHands; ++h) {
        for (int k = 0; k < kKeypoints; ++k) frame[h][k] = to_vec3(f.at(h).at(k));
      }
      kp.push_back(frame);
    }
    r.keypoints3d = std::move(kp);
  }
  for (const auto& c : j.at("cameras")) {
    Camera cam;
    const auto& K = c.at("K");
    cam.K = {K.at(0).get<double>(), K.at(1).get<double>(), K.at(2).get<double>(), K.at(3).get<double>()};
    const auto& R = c.at("R");
    if (R.size() != 9) throw std::invalid_argument("dataset: camera R needs 9 numbers");
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) cam.R(a, b) = R[a * 3 + b].get<double>();
    }
    cam.t = to_vec3(c.at("t"));
    r.cameras.push_back(cam);
  }
  for (const auto& f : j.at("keypoints2d")) {
    FrameKeypoints2D frame;
    for (int h = 0; h < kHands; ++h) {
      for (int k = 0; k < kKeypoints; ++k) {
        const auto& x = f.at(h).at(k);
        frame[h][k] = Vec2(x.at(0).get<double>(), x.at(1).get<double>());
      }
    }
    r.keypoints2d.push_back(frame);
  }
  for (const auto& f : j.at("keypoint_valid")) {
    KeypointFlags flags;
    for (int h = 0; h < kHands; ++h) {
      const auto row = f.at(h).get<std::vector<std::uint8_t>>();
      if (row.size() != kKeypoints) throw std::invalid_argument("dataset: keypoint flags need 21 entries per hand");
      std::copy(row.begin(), row.end(), flags[h].begin());
    }
    r.keypoint_valid.push_back(flags);
  }
  r.frame_valid = j.at("frame_valid").get<std::vector<std::uint8_t>>();
  if (j.contains("generator_params")) r.generator_params = j.at("generator_params");
  if (j.contains("provenance")) r.provenance = j.at("provenance");
  r.validate();
  return r;
}

DatasetFormat format_for_path(const std::string& path) {
  const std::string ext = ".jsonl";
  return path.size() >= ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0
             ? DatasetFormat::JsonLines
             : DatasetFormat::Binary;
}

std::string encode_dataset(const std::vector<TrajectoryRecord>& records, DatasetFormat format) {
  std::string out;
  for (const auto& r : records) {
    const json j = record_to_json(r);
    if (format == DatasetFormat::JsonLines) {
      out += j.dump();
      out += '\n';
    } else {
      const std::vector<std::uint8_t> msg = json::to_msgpack(j);
      const auto n = static_cast<std::uint32_t>(msg.size());
      char len[4];
      std::memcpy(len, &n, 4);
      out.append(len, 4);
      out.append(reinterpret_cast<const char*>(msg.data()), msg.size());
    }
  }
  return out;
}

std::vector<TrajectoryRecord> decode_dataset(const std::string& bytes, DatasetFormat format) {
  std::vector<TrajectoryRecord> out;
  if (format == DatasetFormat::JsonLines) {
    std::size_t pos = 0, line = 0;
    while (pos < bytes.size()) {
      std::size_t end = bytes.find('\n', pos);
      if (end == std::string::npos) end = bytes.size();
      ++line;
      if (end > pos) {
        try {
          out.push_back(record_from_json(json::parse(bytes.begin() + static_cast<long>(pos),
                                                     bytes.begin() + static_cast<long>(end))));
        } catch (const std::exception& e) {
          throw std::runtime_error("dataset line " + std::to_string(line) + ": " + e.what());
        }
      }
      pos = end + 1;
    }
    return out;
  }
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) throw std::runtime_error("dataset: truncated length prefix");
    std::uint32_t n;
    std::memcpy(&n, bytes.data() + pos, 4);
    pos += 4;
    if (bytes.size() - pos < n) throw std::runtime_error("dataset: truncated record");
    const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data() + pos);
    out.push_back(record_from_json(json::from_msgpack(p, p + n)));
    pos += n;
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<TrajectoryRecord>& records) {
  write_file(path, encode_dataset(records, format_for_path(path)));
}

std::vector<TrajectoryRecord> read_dataset(const std::string& path) {
  return decode_dataset(read_file(path), format_for_path(path));
}

}  // namespace bimanual
