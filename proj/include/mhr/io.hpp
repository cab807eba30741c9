#pragma once

#include <string>
#include <vector>

#include "mhr/ba_core.hpp"
#include "mhr/geometry.hpp"
#include "mhr/metrics.hpp"
#include "mhr/world_frame.hpp"

namespace mhr {

/// Camera trajectory as stored on disk: timestamps, unit quaternions with a
/// canonical sign (first nonzero of w,x,y,z positive), and positions. Poses
/// are camera-to-world. Keeping the quaternion representation here makes
/// save(load(file)) byte-identical.
struct Trajectory {
  std::vector<double> times;
  std::vector<Quat> quats;
  std::vector<Vec3> positions;

  std::size_t size() const { return times.size(); }
  std::vector<SE3> poses() const;
  static Trajectory from_poses(const std::vector<double>& times,
                               const std::vector<SE3>& poses_c2w);
};

/// Text, one pose per line: `t tx ty tz qx qy qz qw`, '#' starts a comment.
void save_trajectory_tum(const std::string& path, const Trajectory& traj);
Trajectory load_trajectory_tum(const std::string& path);

/// Raw 32-bit little-endian floats, row-major, NaN = invalid, with a JSON
/// sidecar `{width, height, units:"m"}` at path + ".json".
void save_depth_raw(const std::string& path, const DepthMap& depth);
DepthMap load_depth_raw(const std::string& path);

/// Binary 8-bit PGM (P5), pixel value = instance id, 0 = background.
void save_mask_pgm(const std::string& path, const InstanceMask& mask);
InstanceMask load_mask_pgm(const std::string& path);

/// JSON lines, one record per observed (track, frame) slot:
/// {"beta":[10],"frame":t,"frame_tag":"world","gamma":[3],"phi":[w,x,y,z],
///  "theta":[[w,x,y,z] per joint],"track":id}. Tracks ordered by id, frames
/// ascending. frames < 0 sizes every track to the largest frame seen.
void save_tracks_jsonl(const std::string& path, const std::vector<BodyTrack>& tracks);
std::vector<BodyTrack> load_tracks_jsonl(const std::string& path, int frames = -1);

/// ASCII PLY with double x y z, uchar red green blue, double human.
void save_cloud_ply(const std::string& path, const PointCloud& cloud);
PointCloud load_cloud_ply(const std::string& path);

/// Flat JSON evaluation report.
void save_metrics_json(const std::string& path, const MetricsReport& report);
MetricsReport load_metrics_json(const std::string& path);

/// {"cx","cy","fx","fy","height","width"}.
void save_intrinsics_json(const std::string& path, const Intrinsics& intr);
Intrinsics load_intrinsics_json(const std::string& path);

/// Anchor pixels and frame-pair correspondences in one JSON document.
/// Observation pixels are not stored; they are reconstructed from the
/// anchors, which keeps the two in lockstep by construction.
void save_observations_json(const std::string& path,
                            const std::vector<std::vector<Vec2>>& anchors,
                            const std::vector<FramePairObservation>& observations);
void load_observations_json(const std::string& path, std::vector<std::vector<Vec2>>& anchors,
                            std::vector<FramePairObservation>& observations);

/// Per-frame anchor inverse depths, one JSON array per frame.
void save_inv_depths_json(const std::string& path, const std::vector<VecX>& inv_depths);
std::vector<VecX> load_inv_depths_json(const std::string& path);

}  // namespace mhr
