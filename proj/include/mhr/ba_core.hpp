#pragma once

#include <utility>
#include <vector>

#include "mhr/geometry.hpp"

namespace mhr {

/// Pose convention. The bundle adjustment below stores world-to-camera
/// transforms: G_t maps world points into camera t, so the relative motion
/// G_ij = G_j * G_i^{-1} carries camera-i points into camera j, which is what
/// the reprojection residual needs. Trajectory files and world point lifting
/// use camera-to-world transforms; invert_poses converts between the two.
std::vector<SE3> invert_poses(const std::vector<SE3>& poses);

/// Correspondences between a pair of frames. Targets are the corrected
/// correspondence pixels; confidence is a per-pixel (u, v) weight pair.
/// anchor_index[k] selects the anchor of frame i whose pixel is pixels[k].
struct FramePairObservation {
  int i = 0;
  int j = 0;
  std::vector<int> anchor_index;
  std::vector<Vec2> pixels;
  std::vector<Vec2> targets;
  std::vector<Vec2> confidence;
};

struct BAProblem {
  Intrinsics intr;
  std::vector<SE3> poses;                        // world-to-camera, initial
  std::vector<std::vector<Vec2>> anchor_pixels;  // per frame
  std::vector<VecX> inv_depths;                  // per frame, one per anchor, initial
  std::vector<FramePairObservation> observations;
  std::vector<BoolGrid> union_masks;  // optional: per-frame dynamic foreground
  std::vector<DepthMap> prior_depths;  // optional: per-frame calibrated priors
  double depth_weight = 1.0;

  bool has_masks() const { return !union_masks.empty(); }
  bool has_priors() const { return !prior_depths.empty(); }
  void validate() const;
};

struct BASolution {
  std::vector<SE3> poses;  // world-to-camera
  std::vector<VecX> inv_depths;
  std::vector<double> cost_trace;  // initial cost, then each accepted step
  int iterations = 0;
  bool converged = false;
};

struct BASolveOptions {
  int max_iters = 50;
  double damping_init = 1e-4;
  double damping_max = 1e8;
  double tol = 1e-10;  // relative cost change
};

struct PredictedPixel {
  Vec2 px = Vec2::Zero();
  bool valid = false;  // false when the point lands behind camera j
};

/// Reprojection of frame-i anchor (pixel, inverse depth) into frame j:
/// project(G_j * G_i^{-1} * unproject(pixel, 1/inv_depth)). Poses are
/// world-to-camera. inv_depth must be positive.
PredictedPixel predict_correspondence(const SE3& gi, const SE3& gj, const Intrinsics& intr,
                                      const Vec2& pixel, double inv_depth);

/// One reprojection residual with its analytic Jacobians. Pose Jacobians are
/// with respect to left-multiplicative tangent updates exp(xi) * G on the
/// world-to-camera poses; valid is false when the depth is non-positive or
/// the point lands behind camera j (such terms contribute nothing).
struct ReprojectionTerm {
  Vec2 residual = Vec2::Zero();
  Eigen::Matrix<double, 2, 6> j_pose_i = Eigen::Matrix<double, 2, 6>::Zero();
  Eigen::Matrix<double, 2, 6> j_pose_j = Eigen::Matrix<double, 2, 6>::Zero();
  Vec2 j_inv_depth = Vec2::Zero();
  bool valid = false;
};

ReprojectionTerm reprojection_term(const Intrinsics& intr, const SE3& gi, const SE3& gj,
                                   const Vec2& pixel, const Vec2& target, double inv_depth);

/// Dynamic-foreground masking: the weight is zeroed when the anchor pixel
/// falls inside mask_i or the target pixel falls inside mask_j (nearest-pixel
/// lookup; out-of-image targets count as unmasked).
std::vector<Vec2> mask_confidence(const std::vector<Vec2>& confidence, const BoolGrid& mask_i,
                                  const BoolGrid& mask_j, const std::vector<Vec2>& pixels,
                                  const std::vector<Vec2>& targets);

/// Per-observation confidences after dynamic masking (identity when the
/// problem carries no masks).
std::vector<std::vector<Vec2>> masked_confidences(const BAProblem& problem);

/// Weighted reprojection cost plus the inverse-depth prior term, evaluated at
/// explicit poses/depths. Residuals behind the camera contribute 0. The prior
/// applies only at static anchors (outside the union mask) with a valid
/// prior depth.
double cost(const BAProblem& problem, const std::vector<SE3>& poses,
            const std::vector<VecX>& inv_depths);

/// Damped Gauss-Newton with the first pose held fixed (gauge). Left
/// multiplicative pose updates exp(xi) * G; rejected steps raise the damping
/// tenfold; damping past damping_max returns non-converged with the trace.
BASolution solve(const BAProblem& problem, const BASolveOptions& opts = {});

/// Anchors lifted to world points. Poses here are camera-to-world. Colors and
/// human flags ride along per anchor; anchors with non-positive inverse depth
/// are skipped. origin (if non-null) receives one (frame, anchor) pair per
/// produced point.
PointCloud lift_world_points(const std::vector<SE3>& poses_c2w,
                             const std::vector<std::vector<Vec2>>& anchor_pixels,
                             const std::vector<VecX>& inv_depths, const Intrinsics& intr,
                             const std::vector<std::vector<Vec3>>& colors,
                             const std::vector<std::vector<double>>& human_flags,
                             std::vector<std::pair<int, int>>* origin = nullptr);

/// Drops points whose worst reprojection error against the targets of any
/// observation anchored at them exceeds tau_px. Points that land behind a
/// co-observing camera are dropped; points with no co-observation survive.
/// origin pairs the cloud with its (frame, anchor) sources; poses are
/// world-to-camera (the BA solution).
PointCloud filter_epipolar(const PointCloud& cloud,
                           const std::vector<std::pair<int, int>>& origin,
                           const std::vector<SE3>& poses_w2c, const Intrinsics& intr,
                           const std::vector<FramePairObservation>& observations, double tau_px);

}  // namespace mhr
