#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <map>
#include <tuple>

#include "mhr/ba_core.hpp"
#include "mhr/synth.hpp"
#include "mhr/world_frame.hpp"

using namespace mhr;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.frames = 4;
  cfg.ground_points = 400;
  cfg.clutter_points = 150;
  cfg.anchors_per_frame = 49;
  return cfg;
}

bool same_bits(const MatX& a, const MatX& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * std::size_t(a.size())) == 0;
}

bool same_depth(const DepthMap& a, const DepthMap& b) { return same_bits(a.values(), b.values()); }

}  // namespace

TEST_CASE("same seed regenerates the scenario bit for bit") {
  SynthConfig cfg = small_config();
  cfg.sigma_px = 0.4;
  cfg.depth_noise = 0.01;
  cfg.scale_true = 1.7;
  cfg.offset_true = 0.2;

  SynthScenario a = generate(9, cfg);
  SynthScenario b = generate(9, cfg);

  CHECK(same_bits(a.scene_xyz, b.scene_xyz));
  CHECK(same_bits(a.scene_rgb, b.scene_rgb));
  REQUIRE(a.gt_poses.size() == b.gt_poses.size());
  for (std::size_t t = 0; t < a.gt_poses.size(); ++t)
    CHECK((a.gt_poses[t].matrix() - b.gt_poses[t].matrix()).norm() == 0.0);

  for (int t = 0; t < cfg.frames; ++t) {
    CHECK(same_depth(a.true_depth[t], b.true_depth[t]));
    CHECK(same_depth(a.prior_depth[t], b.prior_depth[t]));
    CHECK((a.masks[t].values().array() == b.masks[t].values().array()).all());
    REQUIRE(a.anchors[t].size() == b.anchors[t].size());
    for (std::size_t k = 0; k < a.anchors[t].size(); ++k)
      CHECK((a.anchors[t][k] - b.anchors[t][k]).norm() == 0.0);
    CHECK(same_bits(a.anchor_depth[t], b.anchor_depth[t]));
  }

  REQUIRE(a.observations.size() == b.observations.size());
  for (std::size_t o = 0; o < a.observations.size(); ++o) {
    const auto& oa = a.observations[o];
    const auto& ob = b.observations[o];
    REQUIRE(oa.targets.size() == ob.targets.size());
    CHECK(oa.anchor_index == ob.anchor_index);
    for (std::size_t k = 0; k < oa.targets.size(); ++k)
      CHECK((oa.targets[k] - ob.targets[k]).norm() == 0.0);
  }

  for (int b_id = 0; b_id < cfg.bodies; ++b_id)
    for (int t = 0; t < cfg.frames; ++t) {
      const BodyParams& pa = *a.gt_tracks[b_id].slots[t];
      const BodyParams& pb = *b.gt_tracks[b_id].slots[t];
      CHECK((pa.gamma - pb.gamma).norm() == 0.0);
      CHECK(pa.phi.w == pb.phi.w);
      CHECK(pa.phi.x == pb.phi.x);
      CHECK(pa.phi.y == pb.phi.y);
      CHECK(pa.phi.z == pb.phi.z);
    }

  SynthScenario c = generate(10, cfg);
  CHECK_FALSE(same_bits(a.scene_xyz, c.scene_xyz));
}

TEST_CASE("scenario structure is coherent") {
  SynthConfig cfg = small_config();
  SynthScenario sc = generate(3, cfg);

  CHECK(int(sc.times.size()) == cfg.frames);
  for (int t = 1; t < cfg.frames; ++t) CHECK(sc.times[t] > sc.times[t - 1]);
  for (const SE3& g : sc.gt_poses) CHECK(is_rotation_matrix(g.rotation(), 1e-12));

  CHECK(sc.gt_tracks[0].frame == FrameTag::world);
  CHECK(sc.cam_tracks[0].frame == FrameTag::camera);
  CHECK(sc.gt_tracks[0].fully_observed());

  for (int t = 0; t < cfg.frames; ++t) {
    REQUIRE(long(sc.anchors[t].size()) == sc.anchor_depth[t].size());
    CHECK(sc.anchors[t].size() > 0);
    CHECK(int(sc.anchors[t].size()) <= cfg.anchors_per_frame);

    // Every body shows up in every frame (generate would have thrown).
    CHECK(sc.masks[t].num_instances() >= cfg.bodies);

    for (std::size_t k = 0; k < sc.anchors[t].size(); ++k) {
      const Vec2& px = sc.anchors[t][k];
      CHECK(px.x() >= 0.0);
      CHECK(px.x() <= cfg.width - 1);
      CHECK(px.y() >= 0.0);
      CHECK(px.y() <= cfg.height - 1);
      int row = int(std::lround(px.y())), col = int(std::lround(px.x()));
      REQUIRE(sc.true_depth[t].valid(row, col));
      CHECK(sc.anchor_depth[t][long(k)] == sc.true_depth[t].at(row, col));
    }
  }

  // Observation spans respect pair_span and index into the anchor lists.
  for (const FramePairObservation& obs : sc.observations) {
    CHECK(obs.i < obs.j);
    CHECK(obs.j - obs.i <= cfg.pair_span);
    for (std::size_t k = 0; k < obs.anchor_index.size(); ++k) {
      REQUIRE(obs.anchor_index[k] < int(sc.anchors[obs.i].size()));
      CHECK((obs.pixels[k] - sc.anchors[obs.i][obs.anchor_index[k]]).norm() == 0.0);
    }
  }
}

TEST_CASE("noise-free targets are exact reprojections of the lifted anchors") {
  SynthScenario sc = generate(4, small_config());
  for (const FramePairObservation& obs : sc.observations) {
    SE3 w2c_j = sc.gt_poses[obs.j].inverse();
    for (std::size_t k = 0; k < obs.targets.size(); ++k) {
      double z = sc.anchor_depth[obs.i][obs.anchor_index[k]];
      Vec3 x_world = sc.gt_poses[obs.i] * unproject(sc.intr, obs.pixels[k], z);
      Vec2 predicted = project(sc.intr, w2c_j * x_world);
      CHECK((predicted - obs.targets[k]).norm() < 1e-12);
    }
  }
}

TEST_CASE("prior depth is the true depth pushed through the inverse map") {
  SynthConfig cfg = small_config();
  cfg.scale_true = 2.0;
  cfg.offset_true = 0.5;
  SynthScenario sc = generate(6, cfg);

  for (int t = 0; t < cfg.frames; ++t) {
    int checked = 0;
    for (int row = 0; row < cfg.height; ++row)
      for (int col = 0; col < cfg.width; ++col) {
        if (!sc.prior_depth[t].valid(row, col)) continue;
        REQUIRE(sc.true_depth[t].valid(row, col));
        double metric = cfg.scale_true * sc.prior_depth[t].at(row, col) + cfg.offset_true;
        CHECK(metric == doctest::Approx(sc.true_depth[t].at(row, col)).epsilon(1e-12));
        ++checked;
      }
    CHECK(checked > 50);
  }
}

TEST_CASE("cam tracks are the world tracks seen from the gt camera") {
  SynthScenario sc = generate(8, small_config());
  for (int t = 0; t < sc.config.frames; ++t) {
    const BodyParams& world = *sc.gt_tracks[0].slots[t];
    const BodyParams& cam = *sc.cam_tracks[0].slots[t];
    BodyParams back = camera_to_world(cam, sc.gt_poses[t], sc.tmpl);
    CHECK(quat_angle(back.phi, world.phi) < 1e-9);
    CHECK((back.gamma - world.gamma).norm() < 1e-9);
    CHECK((back.beta - world.beta).norm() == 0.0);
    for (int j = 0; j < int(world.theta.size()); ++j) {
      // theta never leaves the body frame, so the round trip is bit-exact
      CHECK(back.theta[j].w == world.theta[j].w);
      CHECK(back.theta[j].x == world.theta[j].x);
    }
  }
}

TEST_CASE("ba problem built from a scenario") {
  SynthScenario sc = generate(12, small_config());
  BAProblem p = scenario_problem(sc, true, true, 1.0);
  p.validate();

  REQUIRE(p.poses.size() == sc.gt_poses.size());
  for (std::size_t t = 0; t < p.poses.size(); ++t)
    CHECK((p.poses[t].matrix() - sc.gt_poses[t].inverse().matrix()).norm() < 1e-15);

  for (int t = 0; t < sc.config.frames; ++t) {
    for (long k = 0; k < p.inv_depths[t].size(); ++k)
      CHECK(p.inv_depths[t][k] == 1.0 / sc.anchor_depth[t][k]);
    CHECK((p.union_masks[t].array() == sc.masks[t].union_grid().array()).all());
  }

  // Noise-free ground truth is a global optimum: the cost is numerically zero.
  CHECK(cost(p, p.poses, p.inv_depths) < 1e-18);

  BAProblem bare = scenario_problem(sc, false, false);
  CHECK_FALSE(bare.has_masks());
  CHECK_FALSE(bare.has_priors());
  bare.validate();
}

TEST_CASE("corruption bends only in-mask correspondences") {
  SynthConfig cfg = small_config();
  cfg.frames = 5;
  cfg.anchors_per_frame = 100;
  SynthScenario clean = generate(42, cfg);
  cfg.corruption = 0.6;
  SynthScenario bent = generate(42, cfg);

  // The worlds agree up to the observation pass (same draws up to there).
  CHECK(same_bits(clean.scene_xyz, bent.scene_xyz));
  for (int t = 0; t < cfg.frames; ++t)
    CHECK((clean.masks[t].values().array() == bent.masks[t].values().array()).all());

  using Key = std::tuple<int, int, int>;
  std::map<Key, Vec2> clean_targets;
  for (const auto& obs : clean.observations)
    for (std::size_t k = 0; k < obs.targets.size(); ++k)
      clean_targets[{obs.i, obs.j, obs.anchor_index[k]}] = obs.targets[k];

  int moved = 0, shared = 0;
  for (const auto& obs : bent.observations)
    for (std::size_t k = 0; k < obs.targets.size(); ++k) {
      auto it = clean_targets.find({obs.i, obs.j, obs.anchor_index[k]});
      if (it == clean_targets.end()) continue;
      ++shared;
      const Vec2& px = obs.pixels[k];
      int label = clean.masks[obs.i].at(int(std::lround(px.y())), int(std::lround(px.x())));
      if ((obs.targets[k] - it->second).norm() > 1e-12) {
        ++moved;
        CHECK(label > 0);  // only body anchors may move
      }
    }
  CHECK(shared > 100);
  CHECK(moved > 0);
}

TEST_CASE("config validation") {
  SynthConfig cfg;
  cfg.frames = 1;
  CHECK_THROWS_AS(cfg.validate(), InputError);

  cfg = SynthConfig{};
  cfg.pair_span = 0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg.pair_span = cfg.frames;
  CHECK_THROWS_AS(cfg.validate(), InputError);

  cfg = SynthConfig{};
  cfg.corruption = 1.5;
  CHECK_THROWS_AS(cfg.validate(), InputError);

  cfg = SynthConfig{};
  cfg.scale_true = 0.0;
  CHECK_THROWS_AS(generate(1, cfg), InputError);

  cfg = SynthConfig{};
  cfg.sigma_px = -0.1;
  CHECK_THROWS_AS(cfg.validate(), InputError);
}

TEST_CASE("fd gradient oracle is exact on polynomials of degree <= 2") {
  // Central differences have no error on quadratics beyond rounding.
  MatX a(3, 3);
  a << 4, 1, 0, 1, 3, -1, 0, -1, 2;
  Vec3 b(0.3, -0.7, 1.1);
  auto f = [&](const VecX& x) { return 0.5 * x.dot(a * x) + b.dot(x) + 2.0; };

  SplitMix64 rng(30);
  for (int trial = 0; trial < 10; ++trial) {
    VecX x = VecX::Zero(3);
    for (int i = 0; i < 3; ++i) x[i] = rng.uniform(-2.0, 2.0);
    VecX g = oracle_fd_gradient(f, x, 1e-4);
    VecX expected = a * x + b;
    CHECK((g - expected).norm() < 1e-7);
  }

  auto lin = [&](const VecX& x) { return b.dot(x); };
  VecX g0 = oracle_fd_gradient(lin, VecX::Zero(3), 1e-3);
  CHECK((g0 - VecX(b)).norm() < 1e-10);

  CHECK_THROWS_AS(oracle_fd_gradient(lin, VecX::Zero(3), 0.0), InputError);
}

TEST_CASE("grid oracle rejects bad specs") {
  std::vector<CalibrationFrame> frames;
  GridSpec spec;
  spec.s_lo = 0.0;
  CHECK_THROWS_AS(oracle_grid_calibration(frames, Intrinsics::from_size(32, 32), 1.0, spec),
                  InputError);
  spec = GridSpec{};
  spec.s_steps = 1;
  CHECK_THROWS_AS(oracle_grid_calibration(frames, Intrinsics::from_size(32, 32), 1.0, spec),
                  InputError);
  spec = GridSpec{};
  spec.o_hi = spec.o_lo;
  CHECK_THROWS_AS(oracle_grid_calibration(frames, Intrinsics::from_size(32, 32), 1.0, spec),
                  InputError);
}
