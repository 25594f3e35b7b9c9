#include <cmath>
#include <numbers>

#include "bimanual/camera.hpp"
#include "doctest.h"

using namespace bimanual;

namespace {

Camera unit_camera() {
  Camera c;
  c.K = {1.0, 1.0, 0.0, 0.0};
  return c;
}

Camera random_camera(Rng& rng) {
  Camera c;
  c.K = {rng.uniform(200, 900), rng.uniform(200, 900), rng.uniform(100, 500), rng.uniform(100, 400)};
  c.R = random_rotation(rng);
  c.t = Vec3(rng.normal(), rng.normal(), rng.normal());
  return c;
}

}  // namespace

TEST_CASE("projection of simple points") {
  const Camera c = unit_camera();
  CHECK((project(c, Vec3(0, 0, 1)) - Vec2(0, 0)).norm() == 0.0);
  CHECK((project(c, Vec3(1, 0, 1)) - Vec2(1, 0)).norm() == 0.0);

  Camera k;
  k.K = {500, 500, 320, 320};
  const Vec2 x = project(k, Vec3(0.1, -0.2, 2.0));
  // 500 * 0.1 / 2 + 320, 500 * -0.2 / 2 + 320
  CHECK(x.x() == doctest::Approx(345.0).epsilon(1e-14));
  CHECK(x.y() == doctest::Approx(270.0).epsilon(1e-14));
}

TEST_CASE("projection rejects points behind the camera") {
  const Camera c = unit_camera();
  CHECK_THROWS_AS(project(c, Vec3(0, 0, 0)), std::domain_error);
  CHECK_THROWS_AS(project(c, Vec3(0, 0, -1)), std::domain_error);
  CHECK_THROWS_AS(project(c, Vec3(0, 0, 5e-7)), std::domain_error);
}

TEST_CASE("camera validation") {
  Camera c = unit_camera();
  c.K.fx = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = unit_camera();
  c.R(0, 0) = -1.0;  // reflection
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS_AS(backproject_ray(c, Vec2(0, 0)), std::invalid_argument);
}

TEST_CASE("rays through the origin and a shifted center") {
  const PluckerRay r = backproject_ray(unit_camera(), Vec2(0, 0));
  CHECK((r.d - Vec3(0, 0, 1)).norm() < 1e-15);
  CHECK(r.m.norm() < 1e-15);

  Camera c = unit_camera();
  c.t = Vec3(0, 0, 1);
  const Vec3 center = c.center();
  CHECK((center - Vec3(0, 0, -1)).norm() < 1e-15);
  const PluckerRay s = backproject_ray(c, Vec2(1, 0));
  CHECK((s.d - Vec3(1, 0, 1).normalized()).norm() < 1e-15);
  CHECK(std::abs(s.d.dot(s.m)) < 1e-15);
  CHECK((center.cross(s.d) - s.m).norm() < 1e-15);
  CHECK(((center + s.d).cross(s.d) - s.m).norm() < 1e-15);
}

TEST_CASE("project then backproject is incident") {
  Rng rng(11);
  double worst = 0.0, worst_constraint = 0.0;
  int used = 0;
  while (used < 2000) {
    const Camera c = random_camera(rng);
    const Vec3 Xc(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.2, 3.0));
    const Vec3 P = c.R.transpose() * (Xc - c.t);
    const PluckerRay ray = backproject_ray(c, project(c, P));
    worst = std::max(worst, ray_incidence_residual(ray, P));
    worst = std::max(worst, (P - c.center()).cross(ray.d).norm());
    worst_constraint = std::max({worst_constraint, std::abs(ray.d.norm() - 1.0), std::abs(ray.d.dot(ray.m))});
    ++used;
  }
  CHECK(worst < 1e-9);
  CHECK(worst_constraint < 1e-9);
}

TEST_CASE("KPE values") {
  const Intrinsics K{500, 400, 320, 240};
  const auto at_pp = kpe_encode(Vec2(320, 240), K);
  REQUIRE(at_pp.size() == kpe_width(kDefaultKpeFrequencies));
  REQUIRE(at_pp.size() == 18);
  for (int j = 0; j < 5; ++j) {
    const std::size_t base = j == 0 ? 0 : 2 + 4 * (j - 1);
    if (j == 0) {
      CHECK(at_pp[0] == 0.0);
      CHECK(at_pp[1] == 0.0);
    } else {
      CHECK(at_pp[base] == 0.0);
      CHECK(at_pp[base + 1] == 1.0);
      CHECK(at_pp[base + 2] == 0.0);
      CHECK(at_pp[base + 3] == 1.0);
    }
  }

  const auto e = kpe_encode(Vec2(820, 240), K);
  CHECK(e[0] == doctest::Approx(std::numbers::pi / 4).epsilon(1e-15));
  const double phi_x = std::atan((820.0 - 320.0) / 500.0), phi_y = 0.0;
  for (int j = 0; j < 4; ++j) {
    const double s = std::ldexp(1.0, j);
    CHECK(e[2 + 4 * j] == doctest::Approx(std::sin(s * phi_x)).epsilon(1e-14));
    CHECK(e[3 + 4 * j] == doctest::Approx(std::cos(s * phi_x)).epsilon(1e-14));
    CHECK(e[4 + 4 * j] == doctest::Approx(std::sin(s * phi_y)).epsilon(1e-14));
    CHECK(e[5 + 4 * j] == doctest::Approx(std::cos(s * phi_y)).epsilon(1e-14));
  }
  CHECK(kpe_encode(Vec2(0, 0), K, 2).size() == 10);
}

TEST_CASE("KPE is invariant to consistent resolution changes") {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const Intrinsics K{rng.uniform(200, 800), rng.uniform(200, 800), rng.uniform(100, 400), rng.uniform(100, 400)};
    const Vec2 x(rng.uniform(0, 640), rng.uniform(0, 480));
    const double s = rng.uniform(0.25, 4.0);
    const Intrinsics Ks{K.fx * s, K.fy * s, K.px * s, K.py * s};
    const auto a = kpe_encode(x, K);
    const auto b = kpe_encode(x * s, Ks);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) < 1e-12);
  }
}

TEST_CASE("extrinsics encoding") {
  const auto id = extrinsics_encode(unit_camera());
  const std::array<double, 9> expected{1, 0, 0, 0, 1, 0, 0, 0, 0};
  CHECK(id == expected);

  Camera c = unit_camera();
  c.R = rotation_z(std::numbers::pi / 2);
  c.t = Vec3(1, 2, 3);
  const auto e = extrinsics_encode(c);
  for (int k = 0; k < 3; ++k) {
    CHECK(e[k] == doctest::Approx(c.R(k, 0)).epsilon(1e-15));
    CHECK(e[3 + k] == doctest::Approx(c.R(k, 1)).epsilon(1e-15));
  }
  CHECK(e[6] == 1.0);
  CHECK(e[7] == 2.0);
  CHECK(e[8] == 3.0);

  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    const Camera r = random_camera(rng);
    const auto v = extrinsics_encode(r);
    const Mat3 R = rot6d_to_matrix(Rot6D{v[0], v[1], v[2], v[3], v[4], v[5]});
    CHECK((R - r.R).cwiseAbs().maxCoeff() < 1e-9);
  }
}
