#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

#include "bimanual/metrics.hpp"
#include "bimanual/rng.hpp"
#include "bimanual/synthetic.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bimanual;
using namespace bimanual::oracle;

namespace {

Keypoints3D random_keypoints(Rng& rng, std::size_t frames) {
  Keypoints3D kp(frames);
  for (auto& f : kp) {
    for (auto& h : f) {
      for (auto& p : h) p = Vec3(rng.normal(0, 0.1), rng.normal(0, 0.1), rng.normal(0.5, 0.1));
    }
  }
  return kp;
}

}  // namespace

TEST_CASE("procrustes") {
  Rng rng(1);
  std::vector<Vec3> X(30);
  for (auto& x : X) x = Vec3(rng.normal(), rng.normal(), rng.normal());
  const AlignmentTransform same = procrustes(X, X);
  CHECK(same.s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((same.R - Mat3::Identity()).norm() < 1e-12);
  CHECK(same.t.norm() < 1e-12);

  for (int trial = 0; trial < 50; ++trial) {
    const Mat3 R = random_rotation(rng);
    const Vec3 t0(rng.normal(), rng.normal(), rng.normal());
    std::vector<Vec3> Y;
    for (const auto& x : X) Y.push_back(2.0 * R * x + t0);
    const AlignmentTransform T = procrustes(X, Y);
    CHECK(std::abs(T.s - 2.0) < 1e-9);
    CHECK((T.R - R).norm() < 1e-9);
    CHECK((T.t - t0).norm() < 1e-9);
    const AlignmentTransform rigid = procrustes(X, Y, false);
    CHECK(rigid.s == 1.0);
    CHECK((rigid.R - R).norm() < 1e-9);
  }

  // Reflected target: result stays a proper rotation.
  std::vector<Vec3> M;
  for (const auto& x : X) M.push_back(Vec3(-x.x(), x.y(), x.z()));
  CHECK(procrustes(X, M).R.determinant() == doctest::Approx(1.0));

  CHECK_THROWS_AS(procrustes({X[0], X[1]}, {X[0], X[1]}), std::invalid_argument);
  std::vector<Vec3> line;
  for (int i = 0; i < 5; ++i) line.push_back(Vec3(i, 2.0 * i, -i));
  CHECK_THROWS_AS(procrustes(line, X.size() > 5 ? std::vector<Vec3>(X.begin(), X.begin() + 5) : X), std::invalid_argument);
}

TEST_CASE("fixture oracles") {
  const Keypoints3D gt = fixture_gt(), pred = fixture_pred();
  const std::vector<std::uint8_t> mask{1, 1};

  CHECK(std::abs(mpjpe(pred, gt, mask) - scalar_mean_error(pred, gt, mask)) < 1e-9);
  CHECK(mpjpe(gt, gt, mask) == 0.0);

  const AlignmentTransform pa = horn(flatten(pred, mask), flatten(gt, mask), true);
  CHECK(std::abs(pa_mpjpe(pred, gt, mask) - scalar_mean_error(aligned(pred, pa), gt, mask)) < 1e-9);

  const AlignmentTransform fa = horn(flatten(pred, mask, 0), flatten(gt, mask, 0), false);
  CHECK(std::abs(fa_mpjpe(pred, gt, mask) - scalar_mean_error(aligned(pred, fa), gt, mask)) < 1e-9);

  double rel = 0.0;
  for (int t = 0; t < 2; ++t) {
    const Vec3 a = pred[t][0][0] - pred[t][1][0], b = gt[t][0][0] - gt[t][1][0];
    rel += std::sqrt((a - b).x() * (a - b).x() + (a - b).y() * (a - b).y() + (a - b).z() * (a - b).z());
  }
  CHECK(std::abs(mrrpe(pred, gt, mask) - 100.0 * rel / 2) < 1e-9);

  const auto curve = mpjpe_per_frame(pred, gt, mask);
  REQUIRE(curve.size() == 2);
  CHECK(std::abs(curve[1] - scalar_mean_error(pred, gt, {0, 1})) < 1e-9);
  const auto fa_curve = fa_mpjpe_per_frame(pred, gt, mask);
  CHECK(std::abs(0.5 * (fa_curve[0] + fa_curve[1]) - fa_mpjpe(pred, gt, mask)) < 1e-9);
}

TEST_CASE("uniform offsets and invariances") {
  const Keypoints3D gt = fixture_gt();
  const std::vector<std::uint8_t> mask{1, 1};
  Keypoints3D shifted = gt;
  for (auto& f : shifted) {
    for (auto& h : f) {
      for (auto& p : h) p += Vec3(0.03, 0, 0);
    }
  }
  CHECK(mpjpe(shifted, gt, mask) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(mrrpe(shifted, gt, mask) < 1e-12);
  CHECK(pa_mpjpe(shifted, gt, mask) < 1e-9);
  CHECK(fa_mpjpe(shifted, gt, mask) < 1e-9);

  Keypoints3D left = gt;
  for (auto& f : left) f[0][0] += Vec3(0, 0.04, 0);
  CHECK(mrrpe(left, gt, mask) == doctest::Approx(4.0).epsilon(1e-12));

  Rng rng(2);
  AlignmentTransform sim{1.7, random_rotation(rng), Vec3(0.3, -0.2, 1.0)};
  CHECK(pa_mpjpe(aligned(gt, sim), gt, mask) < 1e-9);
  AlignmentTransform rigid{1.0, random_rotation(rng), Vec3(0.1, 0.2, -0.3)};
  CHECK(fa_mpjpe(aligned(gt, rigid), gt, mask) < 1e-9);

  // Drift after the first frame shows up in FA-MPJPE at its full magnitude.
  Keypoints3D drift = gt;
  for (auto& h : drift[1]) {
    for (auto& p : h) p += Vec3(0, 0, 0.05);
  }
  const auto curve = fa_mpjpe_per_frame(drift, gt, mask);
  CHECK(curve[0] < 1e-9);
  CHECK(curve[1] == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(fa_mpjpe(drift, gt, mask) == doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("metrics ignore masked frames") {
  Rng rng(3);
  const Keypoints3D gt = random_keypoints(rng, 5);
  const Keypoints3D pred = random_keypoints(rng, 5);
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0};
  Keypoints3D edited = pred, edited_gt = gt;
  for (std::size_t t : {2u, 4u}) {
    for (auto& h : edited[t]) {
      for (auto& p : h) p += Vec3(5, -3, 9);
    }
    edited_gt[t][0][0] = Vec3(1e3, 0, 0);
  }
  CHECK(mpjpe(edited, edited_gt, mask) == mpjpe(pred, gt, mask));
  CHECK(std::abs(pa_mpjpe(edited, edited_gt, mask) - pa_mpjpe(pred, gt, mask)) < 1e-12);
  CHECK(std::abs(fa_mpjpe(edited, edited_gt, mask) - fa_mpjpe(pred, gt, mask)) < 1e-12);
  CHECK(mrrpe(edited, edited_gt, mask) == mrrpe(pred, gt, mask));
  CHECK(std::isnan(mpjpe_per_frame(pred, gt, mask)[2]));

  CHECK_THROWS_AS(mpjpe(pred, gt, std::vector<std::uint8_t>(5, 0)), std::invalid_argument);
  CHECK_THROWS_AS(mpjpe(pred, gt, std::vector<std::uint8_t>(4, 1)), std::invalid_argument);
  CHECK_THROWS_AS(fa_mpjpe(pred, gt, {0, 1, 1, 1, 1}), std::invalid_argument);
}

TEST_CASE("pa_mpjpe never exceeds mpjpe") {
  Rng rng(4);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t T = 1 + rng.index(6);
    const Keypoints3D gt = random_keypoints(rng, T);
    Keypoints3D pred = trial % 2 ? random_keypoints(rng, T) : gt;
    if (trial % 2 == 0) {
      AlignmentTransform sim{rng.uniform(0.5, 1.5), random_rotation(rng), Vec3(rng.normal(), rng.normal(), rng.normal())};
      pred = aligned(gt, sim);
      for (auto& f : pred) {
        for (auto& h : f) {
          for (auto& p : h) p += Vec3(rng.normal(0, 0.01), rng.normal(0, 0.01), rng.normal(0, 0.01));
        }
      }
    }
    const std::vector<std::uint8_t> mask(T, 1);
    violations += pa_mpjpe(pred, gt, mask) > mpjpe(pred, gt, mask) + 1e-12;
  }
  CHECK(violations == 0);
}

TEST_CASE("motion-level metrics") {
  MotionGeneratorConfig cfg;
  const auto recs = generate_dataset(cfg, 2);
  const MotionSequence& gt = *recs[0].motion;
  CHECK(mpjpe(gt, gt) == 0.0);
  MotionSequence moved = gt;
  for (auto& f : moved.frames) {
    for (auto& h : f) h.wrist += Vec3(0.03, 0, 0);
  }
  CHECK(mpjpe(moved, gt) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(mrrpe(moved, gt) < 1e-9);
  CHECK(fa_mpjpe(moved, gt) < 1e-9);
  MotionSequence lw = gt;
  for (auto& f : lw.frames) f[0].wrist += Vec3(0, 0.04, 0);
  CHECK(mrrpe(lw, gt) == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(pa_mpjpe(*recs[1].motion, gt) <= mpjpe(*recs[1].motion, gt));
}

TEST_CASE("diversity and multimodality") {
  const long T = 4, D = 198;
  MaskedTokens a{TokenMatrix::Zero(T, D), std::vector<std::uint8_t>(T, 1)};
  MaskedTokens b{TokenMatrix::Constant(T, D, 0.25), std::vector<std::uint8_t>(T, 1)};
  CHECK(diversity({a, a, a}) == 0.0);
  CHECK(diversity({a, b}) == doctest::Approx(0.25 * std::sqrt(double(T * D))).epsilon(1e-12));
  CHECK_THROWS_AS(diversity({a}), std::invalid_argument);

  MaskedTokens c = b;
  c.valid[3] = 0;
  c.tokens.row(3).setConstant(100.0);
  CHECK(token_distance(a, c) == doctest::Approx(0.25 * std::sqrt(double(3 * D))).epsilon(1e-12));

  // Sampled pairs approximate the exhaustive mean.
  Rng rng(5);
  std::vector<MaskedTokens> many;
  for (int i = 0; i < 60; ++i) {
    MaskedTokens m{TokenMatrix::Zero(T, D), std::vector<std::uint8_t>(T, 1)};
    m.tokens(0, 0) = rng.normal();
    many.push_back(m);
  }
  const double exact = diversity(many);
  CHECK(diversity(many, 9, 10, 200000) == doctest::Approx(exact).epsilon(0.02));
  CHECK(diversity(many, 9, 10, 1000) == diversity(many, 9, 10, 1000));

  const auto det = multimodality({{a, a, a}, {b, b}});
  CHECK(det.value == 0.0);
  CHECK(det.deterministic);
  const auto mm = multimodality({{a, b}, {a, a}});
  CHECK(mm.value == doctest::Approx(0.5 * 0.25 * std::sqrt(double(T * D))));
  CHECK(!mm.deterministic);
  CHECK_THROWS_AS(multimodality({{a}}), std::invalid_argument);
  CHECK_THROWS_AS(multimodality({}), std::invalid_argument);
}

TEST_CASE("timestep curves and rank correlation") {
  TimestepCurve c;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  c.add({1, 2, 3});
  c.add({3, nan});
  const auto m = c.mean();
  REQUIRE(m.size() == 3);
  CHECK(m[0] == 2.0);
  CHECK(m[1] == 2.0);
  CHECK(m[2] == 3.0);
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 25, 100}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3}, {1, 1, 2}) == doctest::Approx(std::sqrt(3.0) / 2));
}
