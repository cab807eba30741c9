#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mhr/ba_core.hpp"
#include "mhr/body_model.hpp"
#include "mhr/depth_calibration.hpp"
#include "mhr/world_frame.hpp"

namespace mhr {

struct SynthConfig {
  int frames = 8;
  int width = 96;
  int height = 72;
  int bodies = 1;
  int ground_points = 1100;
  int clutter_points = 400;
  int anchors_per_frame = 64;  // jittered grid
  int pair_span = 2;           // observations for (i, i+1) .. (i, i+pair_span)
  int splat_radius = 2;
  double sigma_px = 0.0;       // Gaussian noise on correspondence targets
  double corruption = 0.0;     // fraction of in-mask targets made body-coherent wrong
  double depth_noise = 0.0;    // multiplicative noise sigma on the prior depth
  double scale_true = 1.0;     // s*: prior depth is (z - o*) / s*
  double offset_true = 0.0;    // o*
  double walk_speed = 0.15;    // meters per frame
  double cam_orbit_near = 1.85;  // camera waypoint radius band centers (+-0.25);
  double cam_orbit_far = 4.45;   // waypoints alternate bands so depth is swept

  void validate() const;
};

/// Everything one deterministic synthetic world provides: ground-truth
/// camera trajectory and bodies, rendered depth/mask/prior images, anchor
/// pixels, and frame-pair correspondences. Regeneration from the same seed
/// is bit-identical (fixed-algorithm RNG, fixed loop orders).
struct SynthScenario {
  std::uint64_t seed = 0;
  SynthConfig config;
  Intrinsics intr;
  BodyTemplate tmpl;
  std::vector<double> times;
  std::vector<SE3> gt_poses;  // camera-to-world

  MatX scene_xyz;  // static world points
  MatX scene_rgb;  // colors quantized to 1/255 steps

  std::vector<BodyTrack> gt_tracks;   // world frame
  std::vector<BodyTrack> cam_tracks;  // per-frame camera-frame detections

  std::vector<DepthMap> true_depth;   // rendered metric depth
  std::vector<DepthMap> prior_depth;  // distorted (s*, o*) estimate, maybe noisy
  std::vector<InstanceMask> masks;

  std::vector<std::vector<Vec2>> anchors;  // per frame
  std::vector<VecX> anchor_depth;          // rendered metric depth per anchor
  std::vector<FramePairObservation> observations;
};

SynthScenario generate(std::uint64_t seed, const SynthConfig& config);

/// The calibration view of a scenario: distorted depth, instance masks, and
/// camera-frame body meshes per frame.
std::vector<CalibrationFrame> calibration_frames(const SynthScenario& sc);

/// The bundle-adjustment view: ground-truth poses (world-to-camera) and
/// anchor inverse depths as the starting point, plus the masks/priors when
/// asked. Callers perturb the initial state themselves. Prior maps are the
/// scenario's distorted depth mapped back to metric with (s*, o*).
BAProblem scenario_problem(const SynthScenario& sc, bool with_masks, bool with_priors,
                           double depth_weight = 1.0);

struct GridSpec {
  double s_lo = 0.1, s_hi = 5.0;
  double o_lo = -2.0, o_hi = 2.0;
  int s_steps = 201;
  int o_steps = 201;
};

struct GridMinimum {
  double s = 1.0;
  double o = 0.0;
  double energy = 0.0;
};

/// Exhaustive minimum of the calibration energy over the grid. Brute force
/// on purpose: this is the optimizer's reference.
GridMinimum oracle_grid_calibration(const std::vector<CalibrationFrame>& frames,
                                    const Intrinsics& intr, double lambda,
                                    const GridSpec& grid);

/// Central finite differences of a scalar function, one coordinate at a time.
VecX oracle_fd_gradient(const std::function<double(const VecX&)>& f, const VecX& x,
                        double eps);

}  // namespace mhr
