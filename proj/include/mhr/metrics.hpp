#pragma once

#include <vector>

#include "mhr/body_model.hpp"
#include "mhr/geometry.hpp"
#include "mhr/world_frame.hpp"

namespace mhr {

/// Joint locations over time, meters. One J x 3 matrix per frame.
struct JointSequence {
  std::vector<MatX> frames;
  FrameTag frame = FrameTag::world;

  int length() const { return int(frames.size()); }
  int joints() const { return frames.empty() ? 0 : int(frames.front().rows()); }
  void validate() const;
};

/// Regressed joints for every frame of a fully observed track.
JointSequence track_joints(const BodyTemplate& tmpl, const BodyTrack& track);

struct SimilarityAlignment {
  double s = 1.0;
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  bool with_scale = false;

  Vec3 apply(const Vec3& x) const { return s * (r * x) + t; }
  MatX apply(const MatX& points) const;  // N x 3 rows
};

/// Closed-form minimizer of sum ||s R x + t - y||^2 over the rows of X and Y
/// (rotation only when with_scale is false). Reflections are excluded by a
/// determinant guard on the SVD factors. Throws InputError when N < 3 or the
/// point sets are too degenerate to pin down the rotation.
SimilarityAlignment procrustes(const MatX& x, const MatX& y, bool with_scale);

/// Optional per-frame validity for the MPJPE family; null means all valid.
using FrameMask = std::vector<std::uint8_t>;

/// Per-frame Procrustes alignment (scale on by default), then mean joint
/// error, averaged over frames. Millimeters.
double pa_mpjpe(const JointSequence& pred, const JointSequence& gt,
                const FrameMask* valid = nullptr, bool with_scale = true);

/// One alignment fit to every joint of every frame, then mean joint error.
double wa_mpjpe(const JointSequence& pred, const JointSequence& gt,
                const FrameMask* valid = nullptr, bool with_scale = true);

/// Alignment fit to the first (valid) frame only, applied everywhere.
double fa_mpjpe(const JointSequence& pred, const JointSequence& gt,
                const FrameMask* valid = nullptr, bool with_scale = true);

/// Mean over interior (t, j) of || a_pred - a_gt || where a is the second
/// finite difference of joint position. mm / frame^2. Needs T >= 3; windows
/// touching an invalid frame are skipped.
double accel_error(const JointSequence& pred, const JointSequence& gt,
                   const FrameMask* valid = nullptr);

struct AteOptions {
  bool align = true;       // least-squares alignment before the residual
  bool with_scale = false; // rigid by default so scale drift counts as error
};

/// RMSE of camera-position residuals after alignment, millimeters. The
/// alignment tolerates collinear trajectories (the residual stays optimal
/// even where the rotation is not unique).
double ate(const std::vector<SE3>& pred, const std::vector<SE3>& gt,
           const AteOptions& opts = {});

struct DepthMetrics {
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  double rel = 0.0;
  double rmse = 0.0;  // meters
};

/// Threshold accuracy, mean absolute relative error, and RMSE over pixels
/// valid in both maps. Throws InputError when no pixel qualifies.
DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt);

/// Flat evaluation summary, the unit of the metrics report file.
struct MetricsReport {
  double pa_mpjpe_mm = 0.0;
  double fa_mpjpe_mm = 0.0;
  double wa_mpjpe_mm = 0.0;
  double accel_mm_f2 = 0.0;
  double ate_mm = 0.0;
  double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
  double rel = 0.0;
  double rmse_m = 0.0;
};

}  // namespace mhr
