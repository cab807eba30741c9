#include "mhr/ba_core.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <map>

namespace mhr {

namespace {

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

bool pixel_in_mask(const BoolGrid& mask, const Vec2& px) {
  long col = std::lround(px.x());
  long row = std::lround(px.y());
  if (row < 0 || col < 0 || row >= mask.rows() || col >= mask.cols()) return false;
  return mask(row, col) != 0;
}

// d/dX of project(X), a 2x3 block.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Intrinsics& intr, const Vec3& x) {
  Eigen::Matrix<double, 2, 3> j;
  double iz = 1.0 / x.z();
  j << intr.fx * iz, 0, -intr.fx * x.x() * iz * iz, 0, intr.fy * iz, -intr.fy * x.y() * iz * iz;
  return j;
}

}  // namespace

std::vector<SE3> invert_poses(const std::vector<SE3>& poses) {
  std::vector<SE3> out;
  out.reserve(poses.size());
  for (const SE3& g : poses) out.push_back(g.inverse());
  return out;
}

void BAProblem::validate() const {
  intr.validate();
  const std::size_t t_count = poses.size();
  if (t_count < 2) throw InputError("ba: need at least two frames");
  if (anchor_pixels.size() != t_count || inv_depths.size() != t_count)
    throw InputError("ba: anchors and inverse depths must cover every frame");
  for (std::size_t t = 0; t < t_count; ++t) {
    if (int(anchor_pixels[t].size()) != inv_depths[t].size())
      throw InputError("ba: anchor/inverse-depth count mismatch at frame " + std::to_string(t));
    for (const Vec2& px : anchor_pixels[t])
      if (px.x() < 0 || px.y() < 0 || px.x() > intr.width - 1 || px.y() > intr.height - 1)
        throw InputError("ba: anchor pixel outside image at frame " + std::to_string(t));
  }
  if (has_masks() && union_masks.size() != t_count)
    throw InputError("ba: union masks must cover every frame");
  if (has_priors() && prior_depths.size() != t_count)
    throw InputError("ba: prior depths must cover every frame");
  if (observations.empty()) throw InputError("ba: need at least one observation");
  for (const FramePairObservation& o : observations) {
    if (o.i == o.j) throw InputError("ba: observation relates a frame to itself");
    if (o.i < 0 || o.j < 0 || o.i >= int(t_count) || o.j >= int(t_count))
      throw InputError("ba: observation frame index out of range");
    std::size_t n = o.anchor_index.size();
    if (o.pixels.size() != n || o.targets.size() != n || o.confidence.size() != n)
      throw InputError("ba: observation list lengths differ");
    for (std::size_t k = 0; k < n; ++k) {
      int a = o.anchor_index[k];
      if (a < 0 || a >= int(anchor_pixels[std::size_t(o.i)].size()))
        throw InputError("ba: observation anchor index out of range");
      if ((o.pixels[k] - anchor_pixels[std::size_t(o.i)][std::size_t(a)]).norm() > 0)
        throw InputError("ba: observation pixel does not match its anchor");
      if (o.confidence[k].x() < 0 || o.confidence[k].y() < 0)
        throw InputError("ba: negative confidence");
    }
  }
}

PredictedPixel predict_correspondence(const SE3& gi, const SE3& gj, const Intrinsics& intr,
                                      const Vec2& pixel, double inv_depth) {
  if (!(inv_depth > 0.0)) throw InputError("predict_correspondence: inverse depth must be positive");
  Vec3 xi = unproject(intr, pixel, 1.0 / inv_depth);
  Vec3 xj = relative_pose(gi, gj) * xi;
  if (!(xj.z() > 0.0)) return {Vec2::Zero(), false};
  return {project(intr, xj), true};
}

ReprojectionTerm reprojection_term(const Intrinsics& intr, const SE3& gi, const SE3& gj,
                                   const Vec2& pixel, const Vec2& target, double inv_depth) {
  ReprojectionTerm term;
  if (!(inv_depth > 0.0)) return term;
  SE3 gij = relative_pose(gi, gj);
  Vec3 xi = unproject(intr, pixel, 1.0 / inv_depth);
  Vec3 xj = gij * xi;
  if (!(xj.z() > 0.0)) return term;
  term.residual = project(intr, xj) - target;
  Eigen::Matrix<double, 2, 3> jp = projection_jacobian(intr, xj);

  Eigen::Matrix<double, 3, 6> ji;
  ji.leftCols<3>() = -Mat3::Identity();
  ji.rightCols<3>() = hat(xi);
  term.j_pose_i = jp * (gij.rotation() * ji);

  Eigen::Matrix<double, 3, 6> jj;
  jj.leftCols<3>() = Mat3::Identity();
  jj.rightCols<3>() = -hat(xj);
  term.j_pose_j = jp * jj;

  term.j_inv_depth = jp * (gij.rotation() * (-xi / inv_depth));
  term.valid = true;
  return term;
}

std::vector<Vec2> mask_confidence(const std::vector<Vec2>& confidence, const BoolGrid& mask_i,
                                  const BoolGrid& mask_j, const std::vector<Vec2>& pixels,
                                  const std::vector<Vec2>& targets) {
  if (confidence.size() != pixels.size() || confidence.size() != targets.size())
    throw InputError("mask_confidence: list lengths differ");
  std::vector<Vec2> out = confidence;
  for (std::size_t k = 0; k < out.size(); ++k)
    if (pixel_in_mask(mask_i, pixels[k]) || pixel_in_mask(mask_j, targets[k]))
      out[k] = Vec2::Zero();
  return out;
}

std::vector<std::vector<Vec2>> masked_confidences(const BAProblem& problem) {
  std::vector<std::vector<Vec2>> out;
  out.reserve(problem.observations.size());
  for (const FramePairObservation& o : problem.observations) {
    if (problem.has_masks())
      out.push_back(mask_confidence(o.confidence, problem.union_masks[std::size_t(o.i)],
                                    problem.union_masks[std::size_t(o.j)], o.pixels, o.targets));
    else
      out.push_back(o.confidence);
  }
  return out;
}

namespace {

bool anchor_is_static(const BAProblem& problem, int frame, const Vec2& px) {
  if (!problem.has_masks()) return true;
  return !pixel_in_mask(problem.union_masks[std::size_t(frame)], px);
}

// Prior depth at an anchor, or NaN when absent/invalid.
double prior_depth_at(const BAProblem& problem, int frame, const Vec2& px) {
  if (!problem.has_priors()) return std::numeric_limits<double>::quiet_NaN();
  const DepthMap& d = problem.prior_depths[std::size_t(frame)];
  if (d.height() == 0) return std::numeric_limits<double>::quiet_NaN();
  long col = std::lround(px.x());
  long row = std::lround(px.y());
  if (row < 0 || col < 0 || row >= d.height() || col >= d.width())
    return std::numeric_limits<double>::quiet_NaN();
  return d.valid(int(row), int(col)) ? d.at(int(row), int(col))
                                     : std::numeric_limits<double>::quiet_NaN();
}

double eval_cost(const BAProblem& problem, const std::vector<std::vector<Vec2>>& masked,
                 const std::vector<SE3>& poses, const std::vector<VecX>& inv_depths) {
  double total = 0.0;
  for (std::size_t oi = 0; oi < problem.observations.size(); ++oi) {
    const FramePairObservation& o = problem.observations[oi];
    SE3 gij = relative_pose(poses[std::size_t(o.i)], poses[std::size_t(o.j)]);
    for (std::size_t k = 0; k < o.anchor_index.size(); ++k) {
      const Vec2& w = masked[oi][k];
      if (w.x() == 0.0 && w.y() == 0.0) continue;
      double d = inv_depths[std::size_t(o.i)][o.anchor_index[k]];
      if (!(d > 0.0)) continue;  // behind-camera rule: weight forced 0
      Vec3 xj = gij * unproject(problem.intr, o.pixels[k], 1.0 / d);
      if (!(xj.z() > 0.0)) continue;
      Vec2 e = project(problem.intr, xj) - o.targets[k];
      total += w.x() * e.x() * e.x() + w.y() * e.y() * e.y();
    }
  }
  if (problem.depth_weight > 0.0 && problem.has_priors()) {
    for (std::size_t t = 0; t < problem.poses.size(); ++t) {
      for (std::size_t k = 0; k < problem.anchor_pixels[t].size(); ++k) {
        const Vec2& px = problem.anchor_pixels[t][k];
        if (!anchor_is_static(problem, int(t), px)) continue;
        double prior = prior_depth_at(problem, int(t), px);
        if (!std::isfinite(prior)) continue;
        double r = inv_depths[t][long(k)] - 1.0 / prior;
        total += problem.depth_weight * r * r;
      }
    }
  }
  return total;
}

}  // namespace

double cost(const BAProblem& problem, const std::vector<SE3>& poses,
            const std::vector<VecX>& inv_depths) {
  if (poses.size() != problem.poses.size() || inv_depths.size() != problem.inv_depths.size())
    throw InputError("cost: pose/depth lists must match the problem layout");
  return eval_cost(problem, masked_confidences(problem), poses, inv_depths);
}

BASolution solve(const BAProblem& problem, const BASolveOptions& opts) {
  problem.validate();
  const int t_count = int(problem.poses.size());
  const std::vector<std::vector<Vec2>> masked = masked_confidences(problem);

  std::vector<SE3> poses = problem.poses;
  std::vector<VecX> depths = problem.inv_depths;

  // Unknown layout: 6 per pose for frames 1..T-1 (frame 0 is the gauge),
  // then inverse depths frame-major.
  std::vector<int> depth_offset(static_cast<std::size_t>(t_count));
  int n = 6 * (t_count - 1);
  for (int t = 0; t < t_count; ++t) {
    depth_offset[std::size_t(t)] = n;
    n += int(depths[std::size_t(t)].size());
  }
  auto pose_offset = [](int t) { return 6 * (t - 1); };

  BASolution sol;
  double current = eval_cost(problem, masked, poses, depths);
  sol.cost_trace.push_back(current);

  double damping = opts.damping_init;
  bool converged = false;
  int iter = 0;
  for (; iter < opts.max_iters && !converged; ++iter) {
    MatX h = MatX::Zero(n, n);
    VecX b = VecX::Zero(n);

    for (std::size_t oi = 0; oi < problem.observations.size(); ++oi) {
      const FramePairObservation& o = problem.observations[oi];
      const SE3& gi = poses[std::size_t(o.i)];
      const SE3& gj = poses[std::size_t(o.j)];
      for (std::size_t k = 0; k < o.anchor_index.size(); ++k) {
        const Vec2& w = masked[oi][k];
        if (w.x() == 0.0 && w.y() == 0.0) continue;
        double d = depths[std::size_t(o.i)][o.anchor_index[k]];
        ReprojectionTerm term =
            reprojection_term(problem.intr, gi, gj, o.pixels[k], o.targets[k], d);
        if (!term.valid) continue;
        const Vec2& e = term.residual;

        // Local columns: pose i (6), pose j (6), inverse depth (1).
        int cols = 0;
        int col_index[13];
        Eigen::Matrix<double, 2, 13> jl;
        if (o.i > 0)
          for (int c = 0; c < 6; ++c) {
            col_index[cols] = pose_offset(o.i) + c;
            jl.col(cols++) = term.j_pose_i.col(c);
          }
        if (o.j > 0)
          for (int c = 0; c < 6; ++c) {
            col_index[cols] = pose_offset(o.j) + c;
            jl.col(cols++) = term.j_pose_j.col(c);
          }
        col_index[cols] = depth_offset[std::size_t(o.i)] + o.anchor_index[k];
        jl.col(cols++) = term.j_inv_depth;

        for (int r = 0; r < cols; ++r) {
          double wr0 = w.x() * jl(0, r), wr1 = w.y() * jl(1, r);
          b[col_index[r]] += wr0 * e.x() + wr1 * e.y();
          for (int c = 0; c < cols; ++c)
            h(col_index[r], col_index[c]) += wr0 * jl(0, c) + wr1 * jl(1, c);
        }
      }
    }

    if (problem.depth_weight > 0.0 && problem.has_priors()) {
      for (int t = 0; t < t_count; ++t) {
        for (std::size_t k = 0; k < problem.anchor_pixels[std::size_t(t)].size(); ++k) {
          const Vec2& px = problem.anchor_pixels[std::size_t(t)][k];
          if (!anchor_is_static(problem, t, px)) continue;
          double prior = prior_depth_at(problem, t, px);
          if (!std::isfinite(prior)) continue;
          int col = depth_offset[std::size_t(t)] + int(k);
          double r = depths[std::size_t(t)][long(k)] - 1.0 / prior;
          h(col, col) += problem.depth_weight;
          b[col] += problem.depth_weight * r;
        }
      }
    }

    // Levenberg loop: retry the same linearization with more damping until a
    // step does not increase the cost.
    bool accepted = false;
    while (!accepted) {
      MatX hd = h;
      hd.diagonal().array() += damping;
      VecX delta = hd.ldlt().solve(-b);
      if (!delta.allFinite()) {
        damping *= 10.0;
        if (damping > opts.damping_max) break;
        continue;
      }

      std::vector<SE3> new_poses = poses;
      for (int t = 1; t < t_count; ++t)
        new_poses[std::size_t(t)] =
            SE3::exp(delta.segment<6>(pose_offset(t))) * poses[std::size_t(t)];
      std::vector<VecX> new_depths = depths;
      for (int t = 0; t < t_count; ++t) {
        auto size = depths[std::size_t(t)].size();
        if (size > 0)
          new_depths[std::size_t(t)] += delta.segment(depth_offset[std::size_t(t)], size);
      }

      double next = eval_cost(problem, masked, new_poses, new_depths);
      if (std::isfinite(next) && next <= current) {
        poses = std::move(new_poses);
        depths = std::move(new_depths);
        double drop = current - next;
        current = next;
        sol.cost_trace.push_back(current);
        damping = std::max(damping * 0.3, 1e-12);
        accepted = true;
        if (drop <= opts.tol * std::max(1.0, current)) converged = true;
      } else {
        damping *= 10.0;
        if (damping > opts.damping_max) break;
      }
    }
    if (!accepted) break;  // damping exhausted
  }

  sol.poses = std::move(poses);
  sol.inv_depths = std::move(depths);
  sol.iterations = iter;
  sol.converged = converged;
  return sol;
}

PointCloud lift_world_points(const std::vector<SE3>& poses_c2w,
                             const std::vector<std::vector<Vec2>>& anchor_pixels,
                             const std::vector<VecX>& inv_depths, const Intrinsics& intr,
                             const std::vector<std::vector<Vec3>>& colors,
                             const std::vector<std::vector<double>>& human_flags,
                             std::vector<std::pair<int, int>>* origin) {
  if (anchor_pixels.size() != poses_c2w.size() || inv_depths.size() != poses_c2w.size())
    throw InputError("lift_world_points: per-frame list lengths differ");
  PointCloud cloud;
  if (origin) origin->clear();
  for (std::size_t t = 0; t < poses_c2w.size(); ++t) {
    for (std::size_t k = 0; k < anchor_pixels[t].size(); ++k) {
      double d = inv_depths[t][long(k)];
      if (!(d > 0.0)) continue;
      CloudPoint p;
      p.xyz = poses_c2w[t] * unproject(intr, anchor_pixels[t][k], 1.0 / d);
      p.rgb = colors.empty() ? Vec3(0.5, 0.5, 0.5) : colors[t][k];
      p.human = human_flags.empty() ? 0.0 : human_flags[t][k];
      cloud.add(p);
      if (origin) origin->emplace_back(int(t), int(k));
    }
  }
  return cloud;
}

PointCloud filter_epipolar(const PointCloud& cloud,
                           const std::vector<std::pair<int, int>>& origin,
                           const std::vector<SE3>& poses_w2c, const Intrinsics& intr,
                           const std::vector<FramePairObservation>& observations, double tau_px) {
  if (!(tau_px > 0.0)) throw InputError("filter_epipolar: tau must be positive");
  if (origin.size() != cloud.size()) throw InputError("filter_epipolar: origin/cloud mismatch");

  std::map<std::pair<int, int>, std::vector<std::pair<const FramePairObservation*, std::size_t>>>
      watchers;
  for (const FramePairObservation& o : observations)
    for (std::size_t k = 0; k < o.anchor_index.size(); ++k)
      watchers[{o.i, o.anchor_index[k]}].push_back({&o, k});

  PointCloud out;
  for (std::size_t p = 0; p < cloud.size(); ++p) {
    auto it = watchers.find(origin[p]);
    bool keep = true;
    if (it != watchers.end()) {
      for (const auto& [obs, k] : it->second) {
        Vec3 xj = poses_w2c[std::size_t(obs->j)] * cloud[p].xyz;
        if (!(xj.z() > 0.0)) {
          keep = false;
          break;
        }
        if ((project(intr, xj) - obs->targets[k]).norm() > tau_px) {
          keep = false;
          break;
        }
      }
    }
    if (keep) out.add(cloud[p]);
  }
  return out;
}

}  // namespace mhr
