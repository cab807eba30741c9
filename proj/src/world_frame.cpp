#include "mhr/world_frame.hpp"

#include <algorithm>

namespace mhr {

bool BodyTrack::fully_observed() const {
  for (const auto& slot : slots)
    if (!slot.has_value()) return false;
  return !slots.empty();
}

BodyParams camera_to_world(const BodyParams& params, const SE3& pose_c2w,
                           const BodyTemplate& tmpl) {
  Vec3 c = pelvis(tmpl, params.beta);
  BodyParams out = params;
  out.phi = (pose_c2w.unit_quaternion() * params.phi).unit();
  out.gamma = pose_c2w.rotation() * (params.gamma + c) + pose_c2w.translation() - c;
  return out;
}

BodyParams world_to_camera(const BodyParams& params, const SE3& pose_c2w,
                           const BodyTemplate& tmpl) {
  Vec3 c = pelvis(tmpl, params.beta);
  BodyParams out = params;
  out.phi = (pose_c2w.unit_quaternion().conjugate() * params.phi).unit();
  out.gamma =
      pose_c2w.rotation().transpose() * (params.gamma + c - pose_c2w.translation()) - c;
  return out;
}

namespace {

BodyParams blend_params(const BodyParams& a, const BodyParams& b, double t) {
  BodyParams out;
  out.phi = quat_slerp(a.phi, b.phi, t);
  out.theta.resize(a.theta.size());
  for (std::size_t j = 0; j < a.theta.size(); ++j)
    out.theta[j] = quat_slerp(a.theta[j], b.theta[j], t);
  out.beta = (1.0 - t) * a.beta + t * b.beta;
  out.gamma = (1.0 - t) * a.gamma + t * b.gamma;
  return out;
}

}  // namespace

BodyTrack interpolate_track(const BodyTrack& track) {
  const int t_count = track.length();
  std::vector<int> observed;
  for (int t = 0; t < t_count; ++t)
    if (track.slots[std::size_t(t)].has_value()) observed.push_back(t);
  if (observed.empty()) throw InputError("interpolate_track: track has no observed frames");

  BodyTrack out = track;
  for (int t = 0; t < t_count; ++t) {
    if (out.slots[std::size_t(t)].has_value()) continue;
    // Nearest observed neighbors on each side; clamp at the ends.
    auto next = std::lower_bound(observed.begin(), observed.end(), t);
    if (next == observed.begin()) {
      out.slots[std::size_t(t)] = track.slots[std::size_t(*next)];
    } else if (next == observed.end()) {
      out.slots[std::size_t(t)] = track.slots[std::size_t(observed.back())];
    } else {
      int hi = *next;
      int lo = *(next - 1);
      double alpha = double(t - lo) / double(hi - lo);
      out.slots[std::size_t(t)] = blend_params(*track.slots[std::size_t(lo)],
                                               *track.slots[std::size_t(hi)], alpha);
    }
  }
  return out;
}

}  // namespace mhr
