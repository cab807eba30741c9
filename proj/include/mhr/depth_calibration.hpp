#pragma once

#include <vector>

#include "mhr/body_model.hpp"
#include "mhr/geometry.hpp"

namespace mhr {

/// One frame of calibration input: the uncalibrated depth map, the instance
/// mask, and one camera-frame body mesh per instance (mesh k pairs with
/// instance id k+1).
struct CalibrationFrame {
  DepthMap depth;
  InstanceMask masks;
  std::vector<BodyMesh> meshes;

  void validate() const;
};

/// Vertex-splat raster of a body mesh: boolean coverage plus a z-buffer
/// (NaN exactly where uncovered).
struct RasterResult {
  BoolGrid mask;
  MatX zbuf;

  int height() const { return int(mask.rows()); }
  int width() const { return int(mask.cols()); }
  bool covered(int row, int col) const { return mask(row, col) != 0; }
};

struct CalibrationResult {
  double s = 1.0;
  double o = 0.0;
  double final_energy = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Z-buffered splatting: every vertex with z > 0 covers the integer-offset
/// disc du^2 + dv^2 <= r^2 around its rounded projection; the nearest depth
/// wins per pixel. The disc convention matches the scene renderer exactly,
/// so a pixel whose scene winner is a body vertex re-rasterizes to the same
/// depth. Vertices behind the camera are skipped; a fully-behind mesh
/// yields an empty raster.
RasterResult rasterize(const BodyMesh& mesh, const Intrinsics& intr, int splat_radius = 2);

/// Elementwise AND of the raster coverage with (instance == n).
BoolGrid overlap_mask(const RasterResult& raster, const InstanceMask& inst, int n);

/// All rasters for one frame, mesh k against instance id k+1.
std::vector<RasterResult> rasterize_frame(const CalibrationFrame& frame, const Intrinsics& intr,
                                          int splat_radius = 2);

/// Mean squared z-gap over every overlap pixel: sum over instances and
/// frames of (zbuf - (s*D + o))^2, divided by the total overlap pixel count.
/// Overlap pixels without a valid depth sample are excluded from both sums.
/// Throws InputError when no overlap pixel exists at all.
double e_depth(const std::vector<CalibrationFrame>& frames,
               const std::vector<std::vector<RasterResult>>& rasters, double s, double o);

/// Analytic d(e_depth)/d(s,o); same support rules as e_depth.
Vec2 e_depth_grad(const std::vector<CalibrationFrame>& frames,
                  const std::vector<std::vector<RasterResult>>& rasters, double s, double o);

struct DepthPair {
  double z;  // rasterized mesh depth
  double d;  // uncalibrated map depth
};

/// The (z, D) pairs e_depth sums over, in its visiting order. One source of
/// truth for the overlap selection, so reductions stay consistent with it.
std::vector<DepthPair> overlap_samples(const std::vector<CalibrationFrame>& frames,
                                       const std::vector<std::vector<RasterResult>>& rasters);

struct PixelSample {
  Vec2 px;
  double depth;
};

/// Unprojects every sample and returns max - min of the chosen coordinate
/// (axis 0 = x, 1 = y). Throws InputError on an empty set.
double extent(const std::vector<PixelSample>& samples, const Intrinsics& intr, int axis);

/// Mean over all (instance, frame) slots of the squared extent mismatch
/// between the rasterized mesh depths and the calibrated map depths, summed
/// over the x and y axes. Slots with an empty overlap contribute 0.
double e_size(const std::vector<CalibrationFrame>& frames,
              const std::vector<std::vector<RasterResult>>& rasters, const Intrinsics& intr,
              double s, double o);

struct CalibrationOptions {
  double lambda = 1.0;
  int max_iterations = 30;
  int splat_radius = 2;
};

/// Minimizes e_depth + lambda * e_size over (s, o) from (1, 0) with L-BFGS;
/// s stays positive via an internal log parameterization. Throws InputError
/// when no frame has mesh/mask overlap, NumericError if the energy turns
/// non-finite.
CalibrationResult calibrate(const std::vector<CalibrationFrame>& frames, const Intrinsics& intr,
                            const CalibrationOptions& opts = {});

/// Combined energy at explicit (s, o), for oracles and diagnostics.
double calibration_energy(const std::vector<CalibrationFrame>& frames,
                          const std::vector<std::vector<RasterResult>>& rasters,
                          const Intrinsics& intr, double lambda, double s, double o);

/// Elementwise s*D + o. NaN cells stay NaN; results <= 0 become NaN.
/// Throws InputError when s <= 0.
DepthMap apply_calibration(const DepthMap& depth, double s, double o);

}  // namespace mhr
