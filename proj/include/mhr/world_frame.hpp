#pragma once

#include <optional>
#include <vector>

#include "mhr/body_model.hpp"

namespace mhr {

/// Per-frame body parameters for one tracked person; missing detections are
/// empty slots.
struct BodyTrack {
  int track_id = 0;
  FrameTag frame = FrameTag::camera;
  std::vector<std::optional<BodyParams>> slots;

  int length() const { return int(slots.size()); }
  bool fully_observed() const;
};

/// Transport camera-frame parameters along a camera-to-world pose. The global
/// orientation rotates about the shaped pelvis c = c(beta), so
///   phi_w = R phi_c,  gamma_w = R (gamma_c + c) + t - c,
/// and theta, beta pass through untouched. With this convention the world
/// mesh equals the pose applied to the camera mesh, exactly.
BodyParams camera_to_world(const BodyParams& params, const SE3& pose_c2w,
                           const BodyTemplate& tmpl);

/// Exact inverse of camera_to_world (round trip is identity to machine
/// precision).
BodyParams world_to_camera(const BodyParams& params, const SE3& pose_c2w,
                           const BodyTemplate& tmpl);

/// Fills missing slots: rotations by slerp (each joint independently), beta
/// and gamma linearly, between the nearest observed neighbors. Leading and
/// trailing gaps clamp to the nearest observation. Throws InputError when no
/// slot is observed.
BodyTrack interpolate_track(const BodyTrack& track);

}  // namespace mhr
