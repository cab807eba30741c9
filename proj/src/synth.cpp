#include "mhr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mhr {

void SynthConfig::validate() const {
  if (frames < 2) throw InputError("synth: need at least 2 frames");
  if (width < 8 || height < 8) throw InputError("synth: image too small");
  if (bodies < 1) throw InputError("synth: need at least one body");
  if (ground_points < 0 || clutter_points < 0) throw InputError("synth: negative point count");
  if (anchors_per_frame < 1) throw InputError("synth: need at least one anchor per frame");
  if (pair_span < 1 || pair_span >= frames) throw InputError("synth: bad pair span");
  if (splat_radius < 0) throw InputError("synth: negative splat radius");
  if (sigma_px < 0 || depth_noise < 0) throw InputError("synth: negative noise level");
  if (corruption < 0.0 || corruption > 1.0) throw InputError("synth: corruption outside [0,1]");
  if (!(scale_true > 0.0)) throw InputError("synth: scale_true must be positive");
  if (walk_speed < 0.0) throw InputError("synth: negative walk speed");
  if (!(cam_orbit_near > 0.3) || !(cam_orbit_far > cam_orbit_near))
    throw InputError("synth: camera orbit bands out of order");
}

namespace {

constexpr double kTau = 6.283185307179586;

Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double u) {
  double u2 = u * u, u3 = u2 * u;
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * u + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2 +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u3);
}

// Camera-to-world look-at with image x right, y down, z forward.
SE3 look_at(const Vec3& eye, const Vec3& target) {
  Vec3 z = target - eye;
  if (z.norm() < 1e-9) throw NumericError("look_at: eye coincides with target");
  z.normalize();
  Vec3 up(0, 1, 0);
  if (std::abs(z.dot(up)) > 0.99) up = Vec3(1, 0, 0);
  Vec3 x = z.cross(up).normalized();
  Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return SE3(r, eye);
}

struct Splat {
  Vec3 xyz;  // world
  int label;  // 0 scene, b+1 body b
};

struct BodyMotion {
  VecX beta;
  Vec3 start;
  Vec3 dir;
  double bob_phase = 0.0;
  double sway_omega = 0.0, sway_phase = 0.0, heading = 0.0;
  std::vector<Vec3> joint_axis;
  std::vector<double> joint_omega, joint_phase, joint_amp;

  BodyParams params_at(double t, double speed, int joints) const {
    BodyParams p;
    p.beta = beta;
    p.gamma = start + dir * (speed * t);
    p.gamma.y() += 0.03 * std::sin(kTau * t / 8.0 + bob_phase);
    double yaw = heading + 0.2 * std::sin(sway_omega * t + sway_phase);
    p.phi = Quat::from_axis_angle(Vec3(0, 1, 0), yaw);
    p.theta.resize(std::size_t(joints));
    for (int j = 0; j < joints; ++j) {
      double ang = joint_amp[std::size_t(j)] *
                   std::sin(joint_omega[std::size_t(j)] * t + joint_phase[std::size_t(j)]);
      p.theta[std::size_t(j)] = Quat::from_axis_angle(joint_axis[std::size_t(j)], ang);
    }
    return p;
  }
};

}  // namespace

SynthScenario generate(std::uint64_t seed, const SynthConfig& config) {
  config.validate();
  SplitMix64 rng(seed);

  SynthScenario sc;
  sc.seed = seed;
  sc.config = config;
  sc.intr = Intrinsics::from_size(config.width, config.height);
  sc.tmpl = make_default_template();
  const int t_count = config.frames;
  const int j_count = sc.tmpl.joint_count();

  // Static world: ground-plane points plus floating clutter, colors in
  // exact 1/255 steps so the cloud files round-trip bit-exactly.
  const int n_points = config.ground_points + config.clutter_points;
  sc.scene_xyz.resize(n_points, 3);
  sc.scene_rgb.resize(n_points, 3);
  for (int i = 0; i < n_points; ++i) {
    if (i < config.ground_points) {
      sc.scene_xyz.row(i) << rng.uniform(-4.5, 4.5), 0.02 * rng.uniform(), rng.uniform(-4.5, 4.5);
    } else {
      sc.scene_xyz.row(i) << rng.uniform(-4.0, 4.0), rng.uniform(0.2, 2.6), rng.uniform(-4.0, 4.0);
    }
    for (int c = 0; c < 3; ++c)
      sc.scene_rgb(i, c) = double(rng.uniform_int(0, 255)) / 255.0;
  }

  // Bodies: fixed shape, straight walk with bob and sway, sinusoidal joints.
  std::vector<BodyMotion> motions;
  for (int b = 0; b < config.bodies; ++b) {
    BodyMotion m;
    m.beta = VecX(BodyTemplate::kShapeCoeffs);
    for (int k = 0; k < BodyTemplate::kShapeCoeffs; ++k) m.beta[k] = rng.uniform(-1.0, 1.0);
    m.heading = rng.uniform(0.0, kTau);
    m.dir = Vec3(std::sin(m.heading), 0.0, std::cos(m.heading));
    m.start = Vec3(rng.uniform(-0.6, 0.6) + 1.4 * b - 0.7 * (config.bodies - 1), 0.0,
                   rng.uniform(-0.6, 0.6));
    m.bob_phase = rng.uniform(0.0, kTau);
    m.sway_omega = rng.uniform(0.2, 0.5);
    m.sway_phase = rng.uniform(0.0, kTau);
    for (int j = 0; j < j_count; ++j) {
      m.joint_axis.push_back(rng.unit_vec3());
      m.joint_omega.push_back(rng.uniform(0.3, 0.9));
      m.joint_phase.push_back(rng.uniform(0.0, kTau));
      m.joint_amp.push_back(j == 0 ? 0.05 : 0.25);
    }
    motions.push_back(std::move(m));
  }

  // Camera path: Catmull-Rom through waypoints on an arc around the bodies,
  // looking a little below the mean pelvis.
  const int n_way = 6;
  std::vector<Vec3> waypoints;
  double a0 = rng.uniform(0.0, kTau);
  double sweep = rng.uniform(0.9, 1.6);
  for (int k = 0; k < n_way; ++k) {
    double a = a0 + sweep * double(k) / double(n_way - 1) + rng.uniform(-0.05, 0.05);
    // Alternate near and far waypoints so every path sweeps a wide depth range.
    double center = (k % 2 == 0) ? config.cam_orbit_near : config.cam_orbit_far;
    double radius = center + rng.uniform(-0.25, 0.25);
    double h = rng.uniform(1.35, 1.8);
    waypoints.emplace_back(radius * std::cos(a), h, radius * std::sin(a));
  }

  sc.gt_tracks.resize(std::size_t(config.bodies));
  sc.cam_tracks.resize(std::size_t(config.bodies));
  for (int b = 0; b < config.bodies; ++b) {
    sc.gt_tracks[std::size_t(b)].track_id = b;
    sc.gt_tracks[std::size_t(b)].frame = FrameTag::world;
    sc.cam_tracks[std::size_t(b)].track_id = b;
    sc.cam_tracks[std::size_t(b)].frame = FrameTag::camera;
  }

  const int segs = n_way - 3;
  for (int t = 0; t < t_count; ++t) {
    sc.times.push_back(double(t));
    std::vector<BodyParams> world_params;
    for (int b = 0; b < config.bodies; ++b)
      world_params.push_back(motions[std::size_t(b)].params_at(double(t), config.walk_speed,
                                                               j_count));

    Vec3 target = Vec3::Zero();
    for (int b = 0; b < config.bodies; ++b)
      target += pelvis(sc.tmpl, world_params[std::size_t(b)].beta) +
                world_params[std::size_t(b)].gamma;
    target /= double(config.bodies);
    target.y() -= 0.15;

    double s = (t_count > 1 ? double(t) / double(t_count - 1) : 0.0) * segs * (1.0 - 1e-9);
    int seg = std::min(int(s), segs - 1);
    Vec3 eye = catmull_rom(waypoints[std::size_t(seg)], waypoints[std::size_t(seg + 1)],
                           waypoints[std::size_t(seg + 2)], waypoints[std::size_t(seg + 3)],
                           s - seg);
    SE3 c2w = look_at(eye, target);
    sc.gt_poses.push_back(c2w);

    for (int b = 0; b < config.bodies; ++b) {
      sc.gt_tracks[std::size_t(b)].slots.push_back(world_params[std::size_t(b)]);
      sc.cam_tracks[std::size_t(b)].slots.push_back(
          world_to_camera(world_params[std::size_t(b)], c2w, sc.tmpl));
    }
  }

  // Renders: z-buffered splats of scene points and camera-frame body meshes.
  const double inf = std::numeric_limits<double>::infinity();
  for (int t = 0; t < t_count; ++t) {
    SE3 w2c = sc.gt_poses[std::size_t(t)].inverse();
    MatX zbuf = MatX::Constant(config.height, config.width, inf);
    InstanceMask::Grid labels = InstanceMask::Grid::Zero(config.height, config.width);

    auto splat = [&](const Vec3& x_cam, int label) {
      if (!(x_cam.z() > 1e-6)) return;
      Vec2 px = project(sc.intr, x_cam);
      long cu = std::lround(px.x()), cv = std::lround(px.y());
      int r = config.splat_radius;
      for (long dv = -r; dv <= r; ++dv)
        for (long du = -r; du <= r; ++du) {
          if (du * du + dv * dv > r * r) continue;
          long col = cu + du, row = cv + dv;
          if (row < 0 || col < 0 || row >= config.height || col >= config.width) continue;
          if (x_cam.z() < zbuf(row, col)) {
            zbuf(row, col) = x_cam.z();
            labels(row, col) = std::uint8_t(label);
          }
        }
    };

    for (int i = 0; i < n_points; ++i) splat(w2c * Vec3(sc.scene_xyz.row(i)), 0);
    for (int b = 0; b < config.bodies; ++b) {
      BodyMesh mesh = pose_mesh(sc.tmpl, *sc.cam_tracks[std::size_t(b)].slots[std::size_t(t)]);
      for (int v = 0; v < mesh.vertices.rows(); ++v) splat(Vec3(mesh.vertices.row(v)), b + 1);
    }

    for (int b = 0; b < config.bodies; ++b)
      if (!(labels.array() == std::uint8_t(b + 1)).any())
        throw InputError("synth: body " + std::to_string(b) + " is invisible in frame " +
                         std::to_string(t) + "; use fewer frames or a slower walk");

    DepthMap depth(config.height, config.width);
    DepthMap prior(config.height, config.width);
    for (int row = 0; row < config.height; ++row)
      for (int col = 0; col < config.width; ++col) {
        double z = zbuf(row, col);
        if (!std::isfinite(z)) continue;
        depth.set(row, col, z);
        double d = (z - config.offset_true) / config.scale_true;
        if (config.depth_noise > 0.0) d *= 1.0 + config.depth_noise * rng.normal();
        if (d > 1e-6) prior.set(row, col, d);
      }
    sc.true_depth.push_back(std::move(depth));
    sc.prior_depth.push_back(std::move(prior));
    sc.masks.emplace_back(std::move(labels));
  }

  // Anchor pixels on a jittered grid, kept only where the render has depth.
  const int grid = int(std::ceil(std::sqrt(double(config.anchors_per_frame))));
  for (int t = 0; t < t_count; ++t) {
    std::vector<Vec2> pts;
    VecX depths(config.anchors_per_frame);
    int kept = 0;
    for (int k = 0; k < config.anchors_per_frame; ++k) {
      int gc = k % grid, gr = k / grid;
      double u = (gc + rng.uniform()) * double(config.width) / grid;
      double v = (gr + rng.uniform()) * double(config.height) / grid;
      u = std::min(u, double(config.width - 1));
      v = std::min(v, double(config.height - 1));
      int row = int(std::lround(v)), col = int(std::lround(u));
      if (!sc.true_depth[std::size_t(t)].valid(row, col)) continue;
      pts.emplace_back(u, v);
      depths[kept++] = sc.true_depth[std::size_t(t)].at(row, col);
    }
    sc.anchors.push_back(std::move(pts));
    sc.anchor_depth.push_back(depths.head(kept).eval());
  }

  // Correspondences. Static anchors follow the rigid world; a corrupted
  // fraction of in-mask anchors instead follows its body's root motion (the
  // coherent wrong answer an optical-flow tracker would report), at full
  // confidence.
  std::vector<Vec3> pelvis_pos(std::size_t(config.bodies));
  for (int b = 0; b < config.bodies; ++b)
    pelvis_pos[std::size_t(b)] = pelvis(sc.tmpl, motions[std::size_t(b)].beta);

  for (int d = 1; d <= config.pair_span; ++d)
    for (int i = 0; i + d < t_count; ++i) {
      int j = i + d;
      FramePairObservation obs;
      obs.i = i;
      obs.j = j;
      SE3 w2c_j = sc.gt_poses[std::size_t(j)].inverse();
      for (std::size_t k = 0; k < sc.anchors[std::size_t(i)].size(); ++k) {
        const Vec2& px = sc.anchors[std::size_t(i)][k];
        double z = sc.anchor_depth[std::size_t(i)][long(k)];
        Vec3 x_world = sc.gt_poses[std::size_t(i)] * unproject(sc.intr, px, z);

        int row = int(std::lround(px.y())), col = int(std::lround(px.x()));
        int label = sc.masks[std::size_t(i)].at(row, col);
        if (label > 0 && config.corruption > 0.0 && rng.uniform() < config.corruption) {
          const BodyTrack& track = sc.gt_tracks[std::size_t(label - 1)];
          const BodyParams& pi = *track.slots[std::size_t(i)];
          const BodyParams& pj = *track.slots[std::size_t(j)];
          Vec3 root_i = pelvis_pos[std::size_t(label - 1)] + pi.gamma;
          Vec3 root_j = pelvis_pos[std::size_t(label - 1)] + pj.gamma;
          x_world = pj.phi.rotate(pi.phi.conjugate().rotate(x_world - root_i)) + root_j;
        }

        Vec3 x_j = w2c_j * x_world;
        if (!(x_j.z() > 1e-6)) continue;
        Vec2 target = project(sc.intr, x_j);
        if (config.sigma_px > 0.0)
          target += config.sigma_px * Vec2(rng.normal(), rng.normal());
        if (target.x() < 0 || target.y() < 0 || target.x() > config.width - 1 ||
            target.y() > config.height - 1)
          continue;
        obs.anchor_index.push_back(int(k));
        obs.pixels.push_back(px);
        obs.targets.push_back(target);
        obs.confidence.push_back(Vec2::Ones());
      }
      if (!obs.anchor_index.empty()) sc.observations.push_back(std::move(obs));
    }

  return sc;
}

std::vector<CalibrationFrame> calibration_frames(const SynthScenario& sc) {
  std::vector<CalibrationFrame> frames;
  for (int t = 0; t < sc.config.frames; ++t) {
    CalibrationFrame f;
    f.depth = sc.prior_depth[std::size_t(t)];
    f.masks = sc.masks[std::size_t(t)];
    for (int b = 0; b < sc.config.bodies; ++b)
      f.meshes.push_back(pose_mesh(sc.tmpl, *sc.cam_tracks[std::size_t(b)].slots[std::size_t(t)]));
    frames.push_back(std::move(f));
  }
  return frames;
}

BAProblem scenario_problem(const SynthScenario& sc, bool with_masks, bool with_priors,
                           double depth_weight) {
  BAProblem p;
  p.intr = sc.intr;
  p.poses = invert_poses(sc.gt_poses);
  p.anchor_pixels = sc.anchors;
  for (const VecX& z : sc.anchor_depth) p.inv_depths.push_back(z.cwiseInverse());
  p.observations = sc.observations;
  p.depth_weight = depth_weight;
  if (with_masks)
    for (const InstanceMask& m : sc.masks) p.union_masks.push_back(m.union_grid());
  if (with_priors)
    for (const DepthMap& d : sc.prior_depth)
      p.prior_depths.push_back(apply_calibration(d, sc.config.scale_true, sc.config.offset_true));
  return p;
}

GridMinimum oracle_grid_calibration(const std::vector<CalibrationFrame>& frames,
                                    const Intrinsics& intr, double lambda,
                                    const GridSpec& grid) {
  if (grid.s_steps < 2 || grid.o_steps < 2 || !(grid.s_lo > 0.0) || grid.s_hi <= grid.s_lo ||
      grid.o_hi <= grid.o_lo)
    throw InputError("grid oracle: bad grid spec");
  if (lambda < 0.0) throw InputError("grid oracle: negative lambda breaks the energy bound");
  std::vector<std::vector<RasterResult>> rasters;
  rasters.reserve(frames.size());
  for (const CalibrationFrame& f : frames) rasters.push_back(rasterize_frame(f, intr));

  // e_size is nonnegative, so e_depth alone bounds the total energy from
  // below. e_depth over the fixed overlap set reduces to centered moments,
  // O(1) per lattice point; scanning points in bound order and stopping once
  // the bound passes the best achieved energy visits every point that could
  // hold the minimum. The safety margin absorbs rounding in the reduction.
  std::vector<DepthPair> samples = overlap_samples(frames, rasters);
  double mz = 0.0, md = 0.0;
  for (const DepthPair& p : samples) {
    mz += p.z;
    md += p.d;
  }
  const double n = double(samples.size());
  if (!samples.empty()) {
    mz /= n;
    md /= n;
  }
  double czz = 0.0, cdd = 0.0, cdz = 0.0;
  for (const DepthPair& p : samples) {
    czz += (p.z - mz) * (p.z - mz);
    cdd += (p.d - md) * (p.d - md);
    cdz += (p.z - mz) * (p.d - md);
  }
  auto depth_bound = [&](double s, double o) {
    double c = mz - s * md - o;
    return (czz - 2.0 * s * cdz + s * s * cdd) / n + c * c;
  };

  struct Cell {
    double bound;
    double s, o;
  };
  std::vector<Cell> cells;
  cells.reserve(std::size_t(grid.s_steps) * std::size_t(grid.o_steps));
  for (int si = 0; si < grid.s_steps; ++si) {
    double s = grid.s_lo + (grid.s_hi - grid.s_lo) * double(si) / double(grid.s_steps - 1);
    for (int oi = 0; oi < grid.o_steps; ++oi) {
      double o = grid.o_lo + (grid.o_hi - grid.o_lo) * double(oi) / double(grid.o_steps - 1);
      cells.push_back({samples.empty() ? 0.0 : depth_bound(s, o), s, o});
    }
  }
  std::stable_sort(cells.begin(), cells.end(),
                   [](const Cell& a, const Cell& b) { return a.bound < b.bound; });

  const double margin = 1e-7;
  GridMinimum best;
  best.energy = std::numeric_limits<double>::infinity();
  for (const Cell& cell : cells) {
    if (cell.bound > best.energy + margin) break;
    double e = calibration_energy(frames, rasters, intr, lambda, cell.s, cell.o);
    if (e < best.energy) best = {cell.s, cell.o, e};
  }
  return best;
}

VecX oracle_fd_gradient(const std::function<double(const VecX&)>& f, const VecX& x, double eps) {
  if (!(eps > 0.0)) throw InputError("fd gradient: eps must be positive");
  VecX g(x.size());
  for (long k = 0; k < x.size(); ++k) {
    VecX hi = x, lo = x;
    hi[k] += eps;
    lo[k] -= eps;
    g[k] = (f(hi) - f(lo)) / (2.0 * eps);
  }
  return g;
}

}  // namespace mhr
