#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "mhr/io.hpp"

using namespace mhr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() / ("mhr_io_" + std::to_string(std::rand()));
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string file(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Trajectory sample_trajectory() {
  std::vector<double> times{0.0, 0.5, 1.25};
  std::vector<SE3> poses;
  SplitMix64 rng(40);
  for (int i = 0; i < 3; ++i)
    poses.push_back(SE3(Quat::from_axis_angle(rng.unit_vec3(), rng.uniform() * 2.0),
                        rng.normal_vec3()));
  return Trajectory::from_poses(times, poses);
}

}  // namespace

TEST_CASE("trajectory tum round trip is byte identical") {
  TempDir tmp;
  Trajectory traj = sample_trajectory();

  std::string p1 = tmp.file("a.tum"), p2 = tmp.file("b.tum");
  save_trajectory_tum(p1, traj);
  Trajectory back = load_trajectory_tum(p1);
  save_trajectory_tum(p2, back);
  CHECK(slurp(p1) == slurp(p2));

  REQUIRE(back.size() == traj.size());
  std::vector<SE3> orig = traj.poses(), rt = back.poses();
  for (std::size_t i = 0; i < orig.size(); ++i) {
    CHECK((orig[i].matrix() - rt[i].matrix()).norm() < 1e-12);
    CHECK(back.times[i] == doctest::Approx(traj.times[i]).epsilon(1e-15));
  }

  // The canonical quaternion sign survives from_poses even when the input
  // rotation came from a negated quaternion.
  std::vector<SE3> flipped{SE3(-Quat::from_axis_angle(Vec3(0, 0, 1), 1.0), Vec3::Zero()),
                           SE3(Quat::from_axis_angle(Vec3(0, 0, 1), 1.0), Vec3::Zero())};
  Trajectory canon = Trajectory::from_poses({0.0, 1.0}, flipped);
  CHECK(canon.quats[0].w == doctest::Approx(canon.quats[1].w).epsilon(1e-12));
  CHECK(canon.quats[0].z == doctest::Approx(canon.quats[1].z).epsilon(1e-12));
}

TEST_CASE("trajectory tum tolerates comments and rejects garbage") {
  TempDir tmp;
  std::string path = tmp.file("hand.tum");
  {
    std::ofstream out(path);
    out << "# ts x y z qx qy qz qw\n";
    out << "0.0 1 2 3 0 0 0 1\n";
    out << "\n";
    out << "1.0 4 5 6 0 0 0 1\n";
  }
  Trajectory traj = load_trajectory_tum(path);
  REQUIRE(traj.size() == 2);
  CHECK((traj.positions[0] - Vec3(1, 2, 3)).norm() == 0.0);
  CHECK((traj.positions[1] - Vec3(4, 5, 6)).norm() == 0.0);

  std::string bad = tmp.file("bad.tum");
  {
    std::ofstream out(bad);
    out << "0.0 1 2 3 0 0\n";  // short line
  }
  CHECK_THROWS_AS(load_trajectory_tum(bad), InputError);
  CHECK_THROWS_AS(load_trajectory_tum(tmp.file("missing.tum")), InputError);
}

TEST_CASE("depth raw round trip with nan holes and sidecar") {
  TempDir tmp;
  DepthMap d(5, 7);
  SplitMix64 rng(41);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c)
      if (rng.uniform() < 0.7) d.set(r, c, float(0.3 + 5.0 * rng.uniform()));

  std::string path = tmp.file("depth.raw");
  save_depth_raw(path, d);
  CHECK(fs::exists(path + ".json"));
  CHECK(fs::file_size(path) == 5 * 7 * 4);

  DepthMap back = load_depth_raw(path);
  REQUIRE(back.height() == 5);
  REQUIRE(back.width() == 7);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c) {
      CHECK(back.valid(r, c) == d.valid(r, c));
      if (d.valid(r, c)) CHECK(back.at(r, c) == d.at(r, c));  // f32 values round trip exactly
    }

  // Same bytes when saved again.
  std::string again = tmp.file("depth2.raw");
  save_depth_raw(again, back);
  CHECK(slurp(path) == slurp(again));

  CHECK_THROWS_AS(load_depth_raw(tmp.file("missing.raw")), InputError);
}

TEST_CASE("mask pgm round trip") {
  TempDir tmp;
  InstanceMask m(6, 9);
  m.set(0, 0, 1);
  m.set(3, 4, 2);
  m.set(5, 8, 2);
  std::string path = tmp.file("mask.pgm");
  save_mask_pgm(path, m);
  InstanceMask back = load_mask_pgm(path);
  REQUIRE(back.height() == 6);
  REQUIRE(back.width() == 9);
  CHECK((back.values().array() == m.values().array()).all());
  CHECK(back.num_instances() == 2);

  std::string bad = tmp.file("bad.pgm");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "P2\n3 3\n255\n";  // ascii variant is not accepted
  }
  CHECK_THROWS_AS(load_mask_pgm(bad), InputError);
}

TEST_CASE("tracks jsonl round trip") {
  TempDir tmp;
  SplitMix64 rng(42);
  BodyTemplate tmpl = make_default_template();

  std::vector<BodyTrack> tracks(2);
  for (int id = 0; id < 2; ++id) {
    tracks[id].track_id = id;
    tracks[id].frame = FrameTag::world;
    for (int t = 0; t < 4; ++t) {
      if (id == 1 && t == 2) {
        tracks[id].slots.push_back(std::nullopt);  // a hole stays a hole
        continue;
      }
      BodyParams p = BodyParams::identity(tmpl.joint_count());
      p.phi = Quat::from_axis_angle(rng.unit_vec3(), rng.uniform());
      for (auto& q : p.theta) q = Quat::from_axis_angle(rng.unit_vec3(), 0.2 * rng.uniform());
      p.beta = VecX::Random(BodyTemplate::kShapeCoeffs);
      p.gamma = rng.normal_vec3();
      tracks[id].slots.push_back(p);
    }
  }

  std::string path = tmp.file("tracks.jsonl");
  save_tracks_jsonl(path, tracks);
  std::vector<BodyTrack> back = load_tracks_jsonl(path);

  REQUIRE(back.size() == 2);
  for (int id = 0; id < 2; ++id) {
    CHECK(back[id].track_id == id);
    CHECK(back[id].frame == FrameTag::world);
    REQUIRE(back[id].length() == 4);
    for (int t = 0; t < 4; ++t) {
      REQUIRE(back[id].slots[t].has_value() == tracks[id].slots[t].has_value());
      if (!back[id].slots[t]) continue;
      const BodyParams& a = *tracks[id].slots[t];
      const BodyParams& b = *back[id].slots[t];
      // doubles serialize round-trippable, so components come back exact
      auto quat_gap = [](const Quat& x, const Quat& y) {
        return std::max({std::abs(x.w - y.w), std::abs(x.x - y.x), std::abs(x.y - y.y),
                         std::abs(x.z - y.z)});
      };
      CHECK(quat_gap(a.phi, b.phi) < 1e-12);
      CHECK((a.beta - b.beta).norm() < 1e-12);
      CHECK((a.gamma - b.gamma).norm() < 1e-12);
      for (std::size_t j = 0; j < a.theta.size(); ++j)
        CHECK(quat_gap(a.theta[j], b.theta[j]) < 1e-12);
    }
  }

  // frames parameter pads short tracks.
  std::vector<BodyTrack> padded = load_tracks_jsonl(path, 6);
  CHECK(padded[0].length() == 6);
  CHECK_FALSE(padded[0].slots[5].has_value());

  CHECK_THROWS_AS(load_tracks_jsonl(tmp.file("missing.jsonl")), InputError);

  std::string corrupt = tmp.file("corrupt.jsonl");
  {
    std::ofstream out(corrupt);
    out << "{\"track\": 0, \"frame\": 0}\n";  // missing parameter fields
  }
  CHECK_THROWS_AS(load_tracks_jsonl(corrupt), InputError);
}

TEST_CASE("cloud ply round trip") {
  TempDir tmp;
  PointCloud cloud;
  SplitMix64 rng(43);
  for (int i = 0; i < 25; ++i) {
    CloudPoint p;
    p.xyz = 3.0 * rng.normal_vec3();
    for (int c = 0; c < 3; ++c) p.rgb[c] = double(rng.uniform_int(0, 255)) / 255.0;
    p.human = i % 3 == 0 ? 1.0 : 0.0;
    cloud.add(p);
  }

  std::string path = tmp.file("cloud.ply");
  save_cloud_ply(path, cloud);
  PointCloud back = load_cloud_ply(path);
  REQUIRE(back.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK((back[i].xyz - cloud[i].xyz).norm() < 1e-12);
    CHECK((back[i].rgb - cloud[i].rgb).norm() < 1e-12);  // 1/255 steps survive ascii
    CHECK(back[i].human == cloud[i].human);
  }

  std::string header = slurp(path).substr(0, 200);
  CHECK(header.find("element vertex 25") != std::string::npos);

  std::string bad = tmp.file("bad.ply");
  {
    std::ofstream out(bad);
    out << "ply\nformat binary_little_endian 1.0\nend_header\n";
  }
  CHECK_THROWS_AS(load_cloud_ply(bad), InputError);
}

TEST_CASE("metrics json round trip") {
  TempDir tmp;
  MetricsReport r;
  r.pa_mpjpe_mm = 12.5;
  r.fa_mpjpe_mm = 30.0;
  r.wa_mpjpe_mm = 20.25;
  r.accel_mm_f2 = 1.75;
  r.ate_mm = 3.125;
  r.delta1 = 0.95;
  r.delta2 = 0.99;
  r.delta3 = 1.0;
  r.rel = 0.03;
  r.rmse_m = 0.0625;

  std::string path = tmp.file("metrics.json");
  save_metrics_json(path, r);
  MetricsReport back = load_metrics_json(path);
  CHECK(back.pa_mpjpe_mm == r.pa_mpjpe_mm);
  CHECK(back.fa_mpjpe_mm == r.fa_mpjpe_mm);
  CHECK(back.wa_mpjpe_mm == r.wa_mpjpe_mm);
  CHECK(back.accel_mm_f2 == r.accel_mm_f2);
  CHECK(back.ate_mm == r.ate_mm);
  CHECK(back.delta1 == r.delta1);
  CHECK(back.delta2 == r.delta2);
  CHECK(back.delta3 == r.delta3);
  CHECK(back.rel == r.rel);
  CHECK(back.rmse_m == r.rmse_m);
}

TEST_CASE("intrinsics json round trip") {
  TempDir tmp;
  Intrinsics intr = Intrinsics::from_size(96, 72);
  std::string path = tmp.file("intrinsics.json");
  save_intrinsics_json(path, intr);
  Intrinsics back = load_intrinsics_json(path);
  CHECK(back.fx == intr.fx);
  CHECK(back.fy == intr.fy);
  CHECK(back.cx == intr.cx);
  CHECK(back.cy == intr.cy);
  CHECK(back.width == intr.width);
  CHECK(back.height == intr.height);

  std::string bad = tmp.file("bad.json");
  {
    std::ofstream out(bad);
    out << "{\"fx\": 100.0}";
  }
  CHECK_THROWS_AS(load_intrinsics_json(bad), InputError);
}

TEST_CASE("observations json reconstructs pixels from anchors") {
  TempDir tmp;
  std::vector<std::vector<Vec2>> anchors(3);
  anchors[0] = {Vec2(1.5, 2.5), Vec2(10.0, 20.0)};
  anchors[1] = {Vec2(3.25, 4.75)};
  anchors[2] = {Vec2(5.0, 6.0), Vec2(7.0, 8.0), Vec2(9.0, 1.0)};

  std::vector<FramePairObservation> obs(2);
  obs[0].i = 0;
  obs[0].j = 1;
  obs[0].anchor_index = {0, 1};
  obs[0].pixels = {anchors[0][0], anchors[0][1]};
  obs[0].targets = {Vec2(2.0, 3.0), Vec2(11.0, 21.5)};
  obs[0].confidence = {Vec2(1, 1), Vec2(0.5, 0.25)};
  obs[1].i = 1;
  obs[1].j = 2;
  obs[1].anchor_index = {0};
  obs[1].pixels = {anchors[1][0]};
  obs[1].targets = {Vec2(4.0, 5.0)};
  obs[1].confidence = {Vec2(0, 0)};

  std::string path = tmp.file("obs.json");
  save_observations_json(path, anchors, obs);

  std::vector<std::vector<Vec2>> anchors_back;
  std::vector<FramePairObservation> obs_back;
  load_observations_json(path, anchors_back, obs_back);

  REQUIRE(anchors_back.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    REQUIRE(anchors_back[t].size() == anchors[t].size());
    for (std::size_t k = 0; k < anchors[t].size(); ++k)
      CHECK((anchors_back[t][k] - anchors[t][k]).norm() == 0.0);
  }

  REQUIRE(obs_back.size() == 2);
  for (std::size_t o = 0; o < 2; ++o) {
    CHECK(obs_back[o].i == obs[o].i);
    CHECK(obs_back[o].j == obs[o].j);
    CHECK(obs_back[o].anchor_index == obs[o].anchor_index);
    REQUIRE(obs_back[o].pixels.size() == obs[o].pixels.size());
    for (std::size_t k = 0; k < obs[o].pixels.size(); ++k) {
      CHECK((obs_back[o].pixels[k] - obs[o].pixels[k]).norm() == 0.0);
      CHECK((obs_back[o].targets[k] - obs[o].targets[k]).norm() == 0.0);
      CHECK((obs_back[o].confidence[k] - obs[o].confidence[k]).norm() == 0.0);
    }
  }
}

TEST_CASE("inv depths json round trip") {
  TempDir tmp;
  std::vector<VecX> depths(2);
  depths[0] = (VecX(3) << 0.5, 1.25, 2.0).finished();
  depths[1] = (VecX(1) << 0.125).finished();

  std::string path = tmp.file("inv.json");
  save_inv_depths_json(path, depths);
  std::vector<VecX> back = load_inv_depths_json(path);
  REQUIRE(back.size() == 2);
  CHECK((back[0] - depths[0]).norm() == 0.0);
  CHECK((back[1] - depths[1]).norm() == 0.0);

  CHECK_THROWS_AS(load_inv_depths_json(tmp.file("missing.json")), InputError);
}

TEST_CASE("synthetic depth survives the raw format") {
  // End-to-end: a rendered map with real NaN holes round trips.
  TempDir tmp;
  DepthMap d(3, 3);
  d.set(1, 1, 2.5);
  d.set(0, 2, 0.125);
  std::string path = tmp.file("render.raw");
  save_depth_raw(path, d);
  DepthMap back = load_depth_raw(path);
  CHECK(back.valid(1, 1));
  CHECK(back.at(1, 1) == 2.5);
  CHECK_FALSE(back.valid(0, 0));
  CHECK_FALSE(back.valid(2, 2));
}
