#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "bimanual/dataset_io.hpp"
#include "bimanual/denoiser.hpp"
#include "bimanual/synthetic.hpp"
#include "doctest.h"

using namespace bimanual;

namespace {

MotionGeneratorConfig held_out_config() {
  MotionGeneratorConfig c;
  c.domain = Domain::HeldOut;
  c.ranges = DomainRanges::held_out();
  return c;
}

double max_projection_error(const TrajectoryRecord& r) {
  const auto kp3d = forward_kinematics(BimanualSkeleton::default_template(), *r.motion);
  double worst = 0.0;
  for (std::size_t t = 0; t < r.frames(); ++t) {
    for (int h = 0; h < kHands; ++h) {
      for (int k = 0; k < kKeypoints; ++k) {
        if (!r.keypoint_valid[t][h][k]) continue;
        worst = std::max(worst, (project(r.cameras[t], kp3d[t][h][k]) - r.keypoints2d[t][h][k]).norm());
      }
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("empty and deterministic generation") {
  MotionGeneratorConfig cfg;
  cfg.seed = 7;
  CHECK(generate_dataset(cfg, 0).empty());
  const auto a = generate_dataset(cfg, 20);
  const auto b = generate_dataset(cfg, 20);
  CHECK(encode_dataset(a, DatasetFormat::JsonLines) == encode_dataset(b, DatasetFormat::JsonLines));
  cfg.seed = 8;
  CHECK(encode_dataset(generate_dataset(cfg, 20), DatasetFormat::JsonLines) != encode_dataset(a, DatasetFormat::JsonLines));
  // Records depend on (seed, index) only.
  cfg.seed = 7;
  const auto tail = generate_dataset(cfg, 5, 15);
  CHECK(encode_dataset(tail, DatasetFormat::Binary) ==
        encode_dataset(std::vector<TrajectoryRecord>(a.begin() + 15, a.end()), DatasetFormat::Binary));
}

TEST_CASE("stored keypoints are exact projections") {
  for (const auto& cfg : {MotionGeneratorConfig{}, held_out_config()}) {
    for (const auto& r : generate_dataset(cfg, 40)) {
      CHECK_NOTHROW(r.validate());
      CHECK(max_projection_error(r) < 1e-6);
      for (const auto& c : r.cameras) CHECK_NOTHROW(c.validate());
      CHECK((r.cameras[0].R - Mat3::Identity()).norm() == 0.0);
      CHECK(r.cameras[0].t.norm() == 0.0);
      CHECK(r.valid_frames() >= 2);
    }
  }
}

TEST_CASE("domains use disjoint parameter ranges") {
  const DomainRanges in = DomainRanges::in_domain(), ho = DomainRanges::held_out();
  CHECK(!in.focal.overlaps(ho.focal));
  CHECK(!in.object_y.overlaps(ho.object_y));
  CHECK(!in.object_z.overlaps(ho.object_z));
  CHECK(!in.object_half_width.overlaps(ho.object_half_width));
  CHECK(!in.lift_height.overlaps(ho.lift_height));
  CHECK(!in.duration.overlaps(ho.duration));
  CHECK(!in.camera_rotation_deg.overlaps(ho.camera_rotation_deg));
  CHECK(!in.camera_translation.overlaps(ho.camera_translation));

  for (const auto& cfg : {MotionGeneratorConfig{}, held_out_config()}) {
    const DomainRanges& r = cfg.ranges;
    for (const auto& rec : generate_dataset(cfg, 60)) {
      const auto& g = rec.generator_params;
      CHECK(r.focal.contains(g["focal"].get<double>()));
      CHECK(r.object_y.contains(g["object"][1].get<double>()));
      CHECK(r.object_z.contains(g["object"][2].get<double>()));
      CHECK(r.object_half_width.contains(g["object_half_width"].get<double>()));
      CHECK(r.lift_height.contains(g["lift_height"].get<double>()));
      CHECK(g["duration"].get<double>() >= r.duration.lo);
      CHECK(g["duration"].get<double>() <= r.duration.hi);
      CHECK(r.camera_rotation_deg.contains(g["camera_rotation_deg"].get<double>()));
      CHECK(g["domain"] == to_string(cfg.domain));
    }
  }
}

TEST_CASE("wrist acceleration stays within the configured bound") {
  MotionGeneratorConfig cfg = held_out_config();
  cfg.max_wrist_accel = 0.004;
  for (const auto& r : generate_dataset(cfg, 50)) CHECK(max_wrist_acceleration(*r.motion) <= cfg.max_wrist_accel);
  MotionGeneratorConfig d;
  for (const auto& r : generate_dataset(d, 50)) CHECK(max_wrist_acceleration(*r.motion) <= d.max_wrist_accel);
}

TEST_CASE("all motion families appear") {
  MotionGeneratorConfig cfg;
  std::map<std::string, int> seen;
  for (const auto& r : generate_dataset(cfg, 100)) seen[r.generator_params["family"].get<std::string>()]++;
  CHECK(seen.size() == 4);
  cfg.family_weights = {0, 1, 0, 0};
  for (const auto& r : generate_dataset(cfg, 10)) CHECK(r.generator_params["family"] == "lift");
  cfg.family_weights = {0.5, 0.5, 0.5, 0};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("bimodal subset shares one t=0 observation") {
  MotionGeneratorConfig cfg;
  cfg.bimodal = true;
  const auto recs = generate_dataset(cfg, 30);
  DenoiserConfig dc;
  dc.mode = DenoiserMode::Forecasting;
  const auto first = observation_features(recs[0], dc);
  std::set<int> branches;
  for (const auto& r : recs) {
    CHECK(observation_features(r, dc) == first);
    branches.insert(r.generator_params["branch"].get<int>());
    CHECK(r.valid_frames() == r.frames());
  }
  CHECK(branches == std::set<int>{0, 1});
}

TEST_CASE("curl helper") {
  HandPose p = HandPose::identity();
  apply_curl(p, {0, 0, 0, 0, 0}, Handedness::Right);
  for (int j = 0; j < kJoints; ++j) CHECK((p.rotation(j) - Mat3::Identity()).norm() < 1e-15);
  apply_curl(p, {1, 0, 0, 0, 0}, Handedness::Left);
  CHECK(geodesic_distance(p.rotation(1), Mat3::Identity()) == doctest::Approx(70 * std::numbers::pi / 180));
  CHECK((p.rotation(4) - Mat3::Identity()).norm() < 1e-15);
}

TEST_CASE("camera augmentation") {
  MotionGeneratorConfig cfg;
  const auto recs = generate_dataset(cfg, 10);
  Rng rng(3);
  CameraAugmentConfig zero{0.0, 0.0, 0.0, 3, 0.0, 0.0, 0.0, 0.0};
  for (const auto& r : recs) {
    const TrajectoryRecord same = camera_augment(r, zero, rng);
    for (std::size_t t = 0; t < r.frames(); ++t) {
      CHECK((same.cameras[t].R - r.cameras[t].R).norm() == 0.0);
      CHECK((same.cameras[t].t - r.cameras[t].t).norm() == 0.0);
      for (int h = 0; h < kHands; ++h) {
        for (int k = 0; k < kKeypoints; ++k) CHECK((same.keypoints2d[t][h][k] - r.keypoints2d[t][h][k]).norm() == 0.0);
      }
    }
    const TrajectoryRecord aug = camera_augment(r, CameraAugmentConfig{}, rng);
    CHECK(encode_dataset({TrajectoryRecord{aug}}, DatasetFormat::JsonLines) != encode_dataset({r}, DatasetFormat::JsonLines));
    TokenMatrix shift = pack_tokens(*aug.motion) - pack_tokens(*r.motion);
    for (int h = 0; h < kHands; ++h) {
      const auto tr = shift.middleCols(token_translation_offset(h), 3);
      // Constant plus linear drift: second differences vanish.
      for (Eigen::Index t = 2; t < tr.rows(); ++t) {
        CHECK((tr.row(t) - 2.0 * tr.row(t - 1) + tr.row(t - 2)).cwiseAbs().maxCoeff() < 1e-12);
      }
      CHECK(std::abs(tr(0, 0)) <= 0.05);
      CHECK(std::abs(tr(0, 2)) <= 0.10);
      shift.middleCols(token_translation_offset(h), 3).setZero();
    }
    CHECK(shift.cwiseAbs().maxCoeff() == 0.0);
    CHECK(max_wrist_acceleration(*aug.motion) == doctest::Approx(max_wrist_acceleration(*r.motion)));
    CHECK((aug.cameras[0].R - Mat3::Identity()).norm() == 0.0);
    CHECK(max_projection_error(aug) < 1e-6);
    bool moved = false;
    for (std::size_t t = 1; t < r.frames(); ++t) moved = moved || (aug.cameras[t].R - r.cameras[t].R).norm() > 1e-6;
    CHECK(moved);
  }
  CameraAugmentConfig wild{0.0, 170.0, 0.0, 0, 0.0, 0.0, 0.0, 0.0};
  int thrown = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng wild_rng(s);
    try {
      camera_augment(recs[0], wild, wild_rng);
    } catch (const std::runtime_error&) {
      ++thrown;
    }
  }
  CHECK(thrown >= 5);
  TrajectoryRecord bare = degrade_tier(recs[0], Tier::Kp2dOnly, {}, rng);
  CHECK_THROWS_AS(camera_augment(bare, CameraAugmentConfig{}, rng), std::invalid_argument);
}

TEST_CASE("tier degradation") {
  MotionGeneratorConfig cfg;
  cfg.truncate_prob = 0.0;
  const auto recs = generate_dataset(cfg, 40);
  Rng rng(4);
  const TrajectoryRecord kp3 = degrade_tier(recs[0], Tier::Kp3dOnly, {}, rng);
  CHECK(!kp3.motion);
  CHECK(kp3.keypoints3d);
  CHECK_NOTHROW(kp3.validate());
  CHECK_THROWS_AS(degrade_tier(kp3, Tier::Full3d, {}, rng), std::invalid_argument);

  const TrajectoryRecord clean = degrade_tier(recs[0], Tier::Kp2dOnly, {0.0, 0.0}, rng);
  CHECK(!clean.motion);
  CHECK(!clean.keypoints3d);
  CHECK(clean.tier == Tier::Kp2dOnly);
  for (std::size_t t = 0; t < clean.frames(); ++t) {
    for (int h = 0; h < kHands; ++h) {
      for (int k = 0; k < kKeypoints; ++k) CHECK((clean.keypoints2d[t][h][k] - recs[0].keypoints2d[t][h][k]).norm() == 0.0);
    }
  }

  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : recs) {
    const TrajectoryRecord j = degrade_tier(r, Tier::Kp2dOnly, {1.0, 0.0}, rng);
    for (std::size_t t = 0; t < r.frames(); ++t) {
      for (int h = 0; h < kHands; ++h) {
        for (int k = 0; k < kKeypoints; ++k) {
          if (!r.keypoint_valid[t][h][k]) continue;
          total += (j.keypoints2d[t][h][k] - r.keypoints2d[t][h][k]).norm();
          ++n;
        }
      }
    }
  }
  REQUIRE(n > 10000);
  CHECK(total / n == doctest::Approx(std::sqrt(std::numbers::pi / 2)).epsilon(0.02));
}

TEST_CASE("dataset files round trip") {
  MotionGeneratorConfig cfg = held_out_config();
  auto recs = generate_dataset(cfg, 6);
  Rng rng(5);
  recs[2] = degrade_tier(recs[2], Tier::Kp2dOnly, {}, rng);
  recs[3] = degrade_tier(recs[3], Tier::Kp3dOnly, {}, rng);
  recs[4].provenance = {{"model_hash", "abc"}};
  const auto dir = std::filesystem::temp_directory_path() / "bimanual_test_io";
  std::filesystem::create_directories(dir);
  for (const std::string name : {"d.jsonl", "d.bin"}) {
    const std::string path = (dir / name).string();
    write_dataset(path, recs);
    const auto back = read_dataset(path);
    REQUIRE(back.size() == recs.size());
    const DatasetFormat f = format_for_path(path);
    CHECK(encode_dataset(back, f) == encode_dataset(recs, f));
    CHECK(encode_dataset(back, DatasetFormat::JsonLines) == encode_dataset(recs, DatasetFormat::JsonLines));
    CHECK(back[2].tier == Tier::Kp2dOnly);
    CHECK(back[4].provenance["model_hash"] == "abc");
    CHECK(back[0].motion->frames[5][1].theta == recs[0].motion->frames[5][1].theta);
  }
  const std::string bin = encode_dataset(recs, DatasetFormat::Binary);
  CHECK_THROWS_AS(decode_dataset(bin.substr(0, bin.size() - 2), DatasetFormat::Binary), std::runtime_error);
  CHECK_THROWS(decode_dataset("{\"id\": 1}\n", DatasetFormat::JsonLines));
  std::filesystem::remove_all(dir);
}

TEST_CASE("generator config JSON") {
  MotionGeneratorConfig c = held_out_config();
  c.seed = 99;
  const MotionGeneratorConfig d = MotionGeneratorConfig::from_json(c.to_json());
  CHECK(d.to_json() == c.to_json());
  CHECK(MotionGeneratorConfig::from_json({{"domain", "held-out-domain"}}).ranges.focal.lo == 600);
  CHECK_THROWS_WITH(MotionGeneratorConfig::from_json({{"frames", 3}}), doctest::Contains("frames"));
  CHECK_THROWS(MotionGeneratorConfig::from_json({{"ranges", {{"focal", {1}}}}}));
}
