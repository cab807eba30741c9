#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mhr/body_model.hpp"
#include "mhr/common.hpp"
#include "mhr/world_frame.hpp"

using namespace mhr;

namespace {

BodyParams random_params(SplitMix64& rng) {
  BodyParams p = BodyParams::identity();
  p.phi = Quat::from_axis_angle(rng.unit_vec3(), rng.uniform() * 2 - 1);
  for (auto& q : p.theta) q = Quat::from_axis_angle(rng.unit_vec3(), 0.5 * (rng.uniform() * 2 - 1));
  for (int k = 0; k < p.beta.size(); ++k) p.beta[k] = rng.uniform() * 2 - 1;
  p.gamma = rng.normal_vec3();
  return p;
}

SE3 random_pose(SplitMix64& rng) {
  return SE3(Quat::from_axis_angle(rng.unit_vec3(), rng.uniform() * 3 - 1.5),
             2.0 * rng.normal_vec3());
}

}  // namespace

TEST_CASE("camera_to_world: identity pose changes nothing") {
  BodyTemplate tmpl = make_default_template();
  SplitMix64 rng(61);
  BodyParams p = random_params(rng);
  BodyParams w = camera_to_world(p, SE3::identity(), tmpl);
  CHECK(std::abs(std::abs(w.phi.dot(p.phi)) - 1.0) < 1e-12);
  CHECK((w.gamma - p.gamma).norm() < 1e-12);
  CHECK((w.beta - p.beta).norm() == 0.0);
}

TEST_CASE("camera_to_world: pure translation shifts gamma only") {
  BodyTemplate tmpl = make_default_template();
  SplitMix64 rng(67);
  BodyParams p = random_params(rng);
  SE3 shift(Mat3::Identity(), Vec3(0.5, -1, 2));
  BodyParams w = camera_to_world(p, shift, tmpl);
  CHECK((w.gamma - (p.gamma + Vec3(0.5, -1, 2))).norm() < 1e-12);
  CHECK(std::abs(std::abs(w.phi.dot(p.phi)) - 1.0) < 1e-12);
}

TEST_CASE("camera_to_world preserves theta and beta bit-exactly") {
  BodyTemplate tmpl = make_default_template();
  SplitMix64 rng(71);
  BodyParams p = random_params(rng);
  SE3 g = random_pose(rng);
  BodyParams w = camera_to_world(p, g, tmpl);
  CHECK((w.beta - p.beta).norm() == 0.0);
  for (std::size_t j = 0; j < p.theta.size(); ++j) {
    CHECK(w.theta[j].w == p.theta[j].w);
    CHECK(w.theta[j].x == p.theta[j].x);
    CHECK(w.theta[j].y == p.theta[j].y);
    CHECK(w.theta[j].z == p.theta[j].z);
  }
}

TEST_CASE("mesh equivariance: transporting params equals transforming the mesh") {
  BodyTemplate tmpl = make_default_template();
  SplitMix64 rng(73);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    BodyParams p = random_params(rng);
    SE3 g = random_pose(rng);
    MatX lhs = pose_mesh(tmpl, camera_to_world(p, g, tmpl), FrameTag::world).vertices;
    MatX cam = pose_mesh(tmpl, p).vertices;
    MatX rhs(cam.rows(), 3);
    for (long v = 0; v < cam.rows(); ++v)
      rhs.row(v) = (g * Vec3(cam.row(v).transpose())).transpose();
    worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("world_to_camera inverts camera_to_world to machine precision") {
  BodyTemplate tmpl = make_default_template();
  SplitMix64 rng(79);
  for (int trial = 0; trial < 100; ++trial) {
    BodyParams p = random_params(rng);
    SE3 g = random_pose(rng);
    BodyParams back = world_to_camera(camera_to_world(p, g, tmpl), g, tmpl);
    CHECK(std::abs(std::abs(back.phi.dot(p.phi)) - 1.0) < 1e-12);
    CHECK((back.gamma - p.gamma).norm() < 1e-12);
  }
}

TEST_CASE("interpolate_track: no gaps means no change") {
  BodyTemplate tmpl = make_default_template();
  SplitMix64 rng(83);
  BodyTrack track;
  track.track_id = 4;
  track.frame = FrameTag::world;
  for (int t = 0; t < 5; ++t) track.slots.emplace_back(random_params(rng));
  BodyTrack full = interpolate_track(track);
  REQUIRE(full.slots.size() == track.slots.size());
  for (int t = 0; t < 5; ++t) {
    CHECK((full.slots[t]->gamma - track.slots[t]->gamma).norm() == 0.0);
    CHECK(full.slots[t]->phi.w == track.slots[t]->phi.w);
  }
  (void)tmpl;
}

TEST_CASE("interpolate_track: gap midpoint for gamma and rotation") {
  BodyParams a = BodyParams::identity();
  BodyParams b = BodyParams::identity();
  b.gamma = Vec3(2, 0, 0);
  b.phi = Quat::from_axis_angle(Vec3(0, 0, 1), M_PI / 2);

  BodyTrack track;
  track.track_id = 0;
  track.frame = FrameTag::world;
  track.slots.emplace_back(a);
  track.slots.emplace_back();  // missing
  track.slots.emplace_back(b);

  BodyTrack full = interpolate_track(track);
  REQUIRE(full.slots[1].has_value());
  CHECK((full.slots[1]->gamma - Vec3(1, 0, 0)).norm() < 1e-12);
  Quat q45 = Quat::from_axis_angle(Vec3(0, 0, 1), M_PI / 4);
  CHECK(std::abs(std::abs(full.slots[1]->phi.dot(q45)) - 1.0) < 1e-12);
}

TEST_CASE("interpolate_track: leading and trailing gaps clamp to nearest") {
  BodyParams mid = BodyParams::identity();
  mid.gamma = Vec3(3, 1, -2);

  BodyTrack track;
  track.frame = FrameTag::world;
  track.slots.emplace_back();
  track.slots.emplace_back(mid);
  track.slots.emplace_back();
  BodyTrack full = interpolate_track(track);
  CHECK((full.slots[0]->gamma - mid.gamma).norm() == 0.0);
  CHECK((full.slots[2]->gamma - mid.gamma).norm() == 0.0);
}

TEST_CASE("interpolated rotations stay orthonormal with det +1") {
  SplitMix64 rng(89);
  BodyTrack track;
  track.frame = FrameTag::world;
  for (int t = 0; t < 9; ++t) {
    if (t % 3 == 0) {
      track.slots.emplace_back(random_params(rng));
    } else {
      track.slots.emplace_back();
    }
  }
  BodyTrack full = interpolate_track(track);
  for (const auto& slot : full.slots) {
    REQUIRE(slot.has_value());
    CHECK(is_rotation_matrix(slot->phi.to_matrix(), 1e-9));
    for (const Quat& q : slot->theta) CHECK(is_rotation_matrix(q.to_matrix(), 1e-9));
  }
}

TEST_CASE("interpolate_track on an empty track throws") {
  BodyTrack track;
  track.frame = FrameTag::world;
  track.slots.resize(4);
  CHECK_THROWS_AS(interpolate_track(track), InputError);
}
