#include "mhr/depth_calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mhr/lbfgs.hpp"

namespace mhr {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

void CalibrationFrame::validate() const {
  if (depth.height() != masks.height() || depth.width() != masks.width())
    throw InputError("calibration frame: depth and mask shapes differ");
  masks.validate();
  if (int(meshes.size()) != masks.num_instances())
    throw InputError("calibration frame: mesh count must match instance count");
}

RasterResult rasterize(const BodyMesh& mesh, const Intrinsics& intr, int splat_radius) {
  intr.validate();
  RasterResult out;
  out.mask = BoolGrid::Zero(intr.height, intr.width);
  out.zbuf = MatX::Constant(intr.height, intr.width, kNaN);

  const long r = splat_radius;
  for (int v = 0; v < mesh.vertices.rows(); ++v) {
    Vec3 p = mesh.vertices.row(v).transpose();
    if (!(p.z() > 1e-6)) continue;
    Vec2 px = project(intr, p);
    long cu = std::lround(px.x()), cv = std::lround(px.y());
    for (long dv = -r; dv <= r; ++dv) {
      for (long du = -r; du <= r; ++du) {
        if (du * du + dv * dv > r * r) continue;
        long col = cu + du, row = cv + dv;
        if (row < 0 || col < 0 || row >= intr.height || col >= intr.width) continue;
        double z = out.zbuf(row, col);
        if (!std::isfinite(z) || p.z() < z) {
          out.zbuf(row, col) = p.z();
          out.mask(row, col) = 1;
        }
      }
    }
  }
  return out;
}

BoolGrid overlap_mask(const RasterResult& raster, const InstanceMask& inst, int n) {
  if (raster.height() != inst.height() || raster.width() != inst.width())
    throw InputError("overlap_mask: shape mismatch");
  BoolGrid out = BoolGrid::Zero(inst.height(), inst.width());
  for (int row = 0; row < inst.height(); ++row)
    for (int col = 0; col < inst.width(); ++col)
      out(row, col) = (raster.covered(row, col) && inst.at(row, col) == n) ? 1 : 0;
  return out;
}

std::vector<RasterResult> rasterize_frame(const CalibrationFrame& frame, const Intrinsics& intr,
                                          int splat_radius) {
  frame.validate();
  std::vector<RasterResult> out;
  out.reserve(frame.meshes.size());
  for (const BodyMesh& mesh : frame.meshes) out.push_back(rasterize(mesh, intr, splat_radius));
  return out;
}

namespace {

// Shared accumulation for e_depth and its gradient: visits every overlap
// pixel with a valid depth sample, in frame/instance/row/col order.
template <typename Fn>
long for_each_overlap_pixel(const std::vector<CalibrationFrame>& frames,
                            const std::vector<std::vector<RasterResult>>& rasters, Fn&& fn) {
  if (frames.size() != rasters.size()) throw InputError("frames/rasters length mismatch");
  long count = 0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const CalibrationFrame& f = frames[t];
    if (rasters[t].size() != f.meshes.size())
      throw InputError("frames/rasters instance count mismatch");
    for (std::size_t n = 0; n < rasters[t].size(); ++n) {
      const RasterResult& ras = rasters[t][n];
      int id = int(n) + 1;
      for (int row = 0; row < ras.height(); ++row) {
        for (int col = 0; col < ras.width(); ++col) {
          if (!ras.covered(row, col) || f.masks.at(row, col) != id) continue;
          if (!f.depth.valid(row, col)) continue;
          fn(ras.zbuf(row, col), f.depth.at(row, col));
          ++count;
        }
      }
    }
  }
  return count;
}

}  // namespace

double e_depth(const std::vector<CalibrationFrame>& frames,
               const std::vector<std::vector<RasterResult>>& rasters, double s, double o) {
  if (!std::isfinite(s) || !std::isfinite(o)) throw InputError("e_depth: non-finite (s, o)");
  double sum = 0.0;
  long count = for_each_overlap_pixel(frames, rasters, [&](double z, double d) {
    double r = z - (s * d + o);
    sum += r * r;
  });
  if (count == 0)
    throw InputError("e_depth: no mesh/mask overlap pixels, calibration has no support");
  return sum / double(count);
}

Vec2 e_depth_grad(const std::vector<CalibrationFrame>& frames,
                  const std::vector<std::vector<RasterResult>>& rasters, double s, double o) {
  double gs = 0.0, go = 0.0;
  long count = for_each_overlap_pixel(frames, rasters, [&](double z, double d) {
    double r = z - (s * d + o);
    gs += -2.0 * r * d;
    go += -2.0 * r;
  });
  if (count == 0)
    throw InputError("e_depth_grad: no mesh/mask overlap pixels, calibration has no support");
  return Vec2(gs / double(count), go / double(count));
}

std::vector<DepthPair> overlap_samples(const std::vector<CalibrationFrame>& frames,
                                       const std::vector<std::vector<RasterResult>>& rasters) {
  std::vector<DepthPair> out;
  for_each_overlap_pixel(frames, rasters, [&](double z, double d) { out.push_back({z, d}); });
  return out;
}

double extent(const std::vector<PixelSample>& samples, const Intrinsics& intr, int axis) {
  if (samples.empty()) throw InputError("extent: empty pixel set");
  if (axis != 0 && axis != 1) throw InputError("extent: axis must be 0 (x) or 1 (y)");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const PixelSample& s : samples) {
    Vec3 p = unproject(intr, s.px, s.depth);
    double c = axis == 0 ? p.x() : p.y();
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  return hi - lo;
}

double e_size(const std::vector<CalibrationFrame>& frames,
              const std::vector<std::vector<RasterResult>>& rasters, const Intrinsics& intr,
              double s, double o) {
  if (frames.size() != rasters.size()) throw InputError("frames/rasters length mismatch");
  double sum = 0.0;
  long slots = 0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const CalibrationFrame& f = frames[t];
    for (std::size_t n = 0; n < rasters[t].size(); ++n) {
      ++slots;
      const RasterResult& ras = rasters[t][n];
      int id = int(n) + 1;
      std::vector<PixelSample> mesh_side, map_side;
      for (int row = 0; row < ras.height(); ++row) {
        for (int col = 0; col < ras.width(); ++col) {
          if (!ras.covered(row, col) || f.masks.at(row, col) != id) continue;
          if (!f.depth.valid(row, col)) continue;
          double mapped = s * f.depth.at(row, col) + o;
          if (!(mapped > 0.0)) continue;  // unprojectable at this (s, o)
          Vec2 px(static_cast<double>(col), static_cast<double>(row));
          mesh_side.push_back({px, ras.zbuf(row, col)});
          map_side.push_back({px, mapped});
        }
      }
      if (mesh_side.empty()) continue;
      for (int axis = 0; axis < 2; ++axis) {
        double gap = extent(mesh_side, intr, axis) - extent(map_side, intr, axis);
        sum += gap * gap;
      }
    }
  }
  if (slots == 0) return 0.0;
  return sum / double(slots);
}

double calibration_energy(const std::vector<CalibrationFrame>& frames,
                          const std::vector<std::vector<RasterResult>>& rasters,
                          const Intrinsics& intr, double lambda, double s, double o) {
  return e_depth(frames, rasters, s, o) + lambda * e_size(frames, rasters, intr, s, o);
}

CalibrationResult calibrate(const std::vector<CalibrationFrame>& frames, const Intrinsics& intr,
                            const CalibrationOptions& opts) {
  std::vector<std::vector<RasterResult>> rasters;
  rasters.reserve(frames.size());
  for (const CalibrationFrame& f : frames)
    rasters.push_back(rasterize_frame(f, intr, opts.splat_radius));

  // x = (log s, o): the scale stays positive by construction.
  auto energy_at = [&](double ls, double o) {
    return calibration_energy(frames, rasters, intr, opts.lambda, std::exp(ls), o);
  };
  LbfgsObjective objective = [&](const VecX& x, VecX& grad) -> double {
    double s = std::exp(x[0]);
    double o = x[1];
    double e = e_depth(frames, rasters, s, o) + opts.lambda * e_size(frames, rasters, intr, s, o);
    if (!std::isfinite(e))
      throw NumericError("calibrate: non-finite energy at s=" + std::to_string(s) +
                         " o=" + std::to_string(o));
    Vec2 gd = e_depth_grad(frames, rasters, s, o);
    grad.resize(2);
    grad[0] = gd[0] * s;  // chain rule through s = exp(log s)
    grad[1] = gd[1];
    // The extent terms are piecewise smooth (max/min over pixels); central
    // differences are exact away from the measure-zero switching set.
    const double h = 1e-6;
    double e_sz_s1 = e_size(frames, rasters, intr, std::exp(x[0] + h), o);
    double e_sz_s0 = e_size(frames, rasters, intr, std::exp(x[0] - h), o);
    double e_sz_o1 = e_size(frames, rasters, intr, s, o + h);
    double e_sz_o0 = e_size(frames, rasters, intr, s, o - h);
    grad[0] += opts.lambda * (e_sz_s1 - e_sz_s0) / (2.0 * h);
    grad[1] += opts.lambda * (e_sz_o1 - e_sz_o0) / (2.0 * h);
    return e;
  };

  LbfgsOptions lopts;
  lopts.max_iterations = opts.max_iterations;
  VecX x0(2);
  x0 << 0.0, 0.0;  // (s, o) = (1, 0)
  LbfgsResult r = lbfgs_minimize(objective, x0, lopts);

  CalibrationResult out;
  out.s = std::exp(r.x[0]);
  out.o = r.x[1];
  out.final_energy = energy_at(r.x[0], r.x[1]);
  out.iterations = r.iterations;
  out.converged = r.converged;
  return out;
}

DepthMap apply_calibration(const DepthMap& depth, double s, double o) {
  if (!(s > 0.0)) throw InputError("apply_calibration: scale must be positive");
  DepthMap out(depth.height(), depth.width());
  for (int row = 0; row < depth.height(); ++row) {
    for (int col = 0; col < depth.width(); ++col) {
      double v = depth.at(row, col);
      if (!std::isfinite(v)) continue;  // stays NaN
      double mapped = s * v + o;
      out.set(row, col, mapped > 0.0 ? mapped : kNaN);
    }
  }
  return out;
}

}  // namespace mhr
