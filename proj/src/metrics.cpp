#include "mhr/metrics.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace mhr {

void JointSequence::validate() const {
  if (frames.empty()) throw InputError("joint sequence is empty");
  const long j = frames.front().rows();
  for (const MatX& f : frames) {
    if (f.rows() != j || f.cols() != 3)
      throw InputError("joint sequence frames disagree on shape");
    if (!f.allFinite()) throw InputError("joint sequence has non-finite entries");
  }
}

JointSequence track_joints(const BodyTemplate& tmpl, const BodyTrack& track) {
  if (!track.fully_observed()) throw InputError("track_joints: track has missing frames");
  JointSequence seq;
  seq.frame = track.frame;
  seq.frames.reserve(track.slots.size());
  for (const auto& slot : track.slots) seq.frames.push_back(posed_joints(tmpl, *slot));
  return seq;
}

MatX SimilarityAlignment::apply(const MatX& points) const {
  if (points.cols() != 3) throw InputError("alignment applies to N x 3 point rows");
  MatX out = s * (points * r.transpose());
  out.rowwise() += t.transpose();
  return out;
}

namespace {

// Umeyama closed form. require_unique insists the rotation is determined
// (two significant singular values); the trajectory aligner turns that off
// because the minimum residual is still attained at the guarded SVD solution
// when the points are collinear.
SimilarityAlignment align_points(const MatX& x, const MatX& y, bool with_scale,
                                 bool require_unique) {
  if (x.rows() != y.rows() || x.cols() != 3 || y.cols() != 3)
    throw InputError("alignment needs matching N x 3 point sets");
  const long n = x.rows();
  if (require_unique && n < 3) throw InputError("alignment needs at least 3 points");
  if (n < 1) throw InputError("alignment needs at least 1 point");

  Vec3 mx = x.colwise().mean();
  Vec3 my = y.colwise().mean();
  MatX xc = x.rowwise() - mx.transpose();
  MatX yc = y.rowwise() - my.transpose();

  Mat3 cov = (yc.transpose() * xc) / double(n);
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 d = svd.singularValues();
  if (require_unique && (d(0) <= 0.0 || d(1) <= 1e-12 * d(0)))
    throw InputError("alignment is degenerate (collinear or coincident points)");

  Vec3 sign = Vec3::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) sign(2) = -1.0;
  Mat3 r = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();

  SimilarityAlignment a;
  a.with_scale = with_scale;
  a.r = r;
  if (with_scale) {
    double var_x = xc.squaredNorm() / double(n);
    if (var_x <= 0.0) throw InputError("alignment with scale needs a non-degenerate source");
    a.s = d.dot(sign) / var_x;
    if (a.s <= 0.0) throw InputError("alignment produced a non-positive scale");
  }
  a.t = my - a.s * (r * mx);
  return a;
}

double mean_row_error(const MatX& aligned, const MatX& gt) {
  return (aligned - gt).rowwise().norm().mean();
}

void check_pair(const JointSequence& pred, const JointSequence& gt, const FrameMask* valid) {
  pred.validate();
  gt.validate();
  if (pred.length() != gt.length() || pred.joints() != gt.joints())
    throw InputError("joint sequences disagree on shape");
  if (valid && int(valid->size()) != pred.length())
    throw InputError("validity mask length mismatch");
}

bool frame_ok(const FrameMask* valid, int t) { return !valid || (*valid)[std::size_t(t)] != 0; }

MatX stack_valid(const JointSequence& seq, const FrameMask* valid) {
  int count = 0;
  for (int t = 0; t < seq.length(); ++t)
    if (frame_ok(valid, t)) ++count;
  if (count == 0) throw InputError("no valid frames");
  MatX out(long(count) * seq.joints(), 3);
  long row = 0;
  for (int t = 0; t < seq.length(); ++t) {
    if (!frame_ok(valid, t)) continue;
    out.middleRows(row, seq.joints()) = seq.frames[std::size_t(t)];
    row += seq.joints();
  }
  return out;
}

constexpr double kMm = 1000.0;

}  // namespace

SimilarityAlignment procrustes(const MatX& x, const MatX& y, bool with_scale) {
  return align_points(x, y, with_scale, true);
}

double pa_mpjpe(const JointSequence& pred, const JointSequence& gt, const FrameMask* valid,
                bool with_scale) {
  check_pair(pred, gt, valid);
  double total = 0.0;
  int count = 0;
  for (int t = 0; t < pred.length(); ++t) {
    if (!frame_ok(valid, t)) continue;
    const MatX& p = pred.frames[std::size_t(t)];
    const MatX& g = gt.frames[std::size_t(t)];
    SimilarityAlignment a = align_points(p, g, with_scale, true);
    total += mean_row_error(a.apply(p), g);
    ++count;
  }
  if (count == 0) throw InputError("pa_mpjpe: no valid frames");
  return kMm * total / count;
}

double wa_mpjpe(const JointSequence& pred, const JointSequence& gt, const FrameMask* valid,
                bool with_scale) {
  check_pair(pred, gt, valid);
  MatX p = stack_valid(pred, valid);
  MatX g = stack_valid(gt, valid);
  SimilarityAlignment a = align_points(p, g, with_scale, true);
  return kMm * mean_row_error(a.apply(p), g);
}

double fa_mpjpe(const JointSequence& pred, const JointSequence& gt, const FrameMask* valid,
                bool with_scale) {
  check_pair(pred, gt, valid);
  int first = -1;
  for (int t = 0; t < pred.length() && first < 0; ++t)
    if (frame_ok(valid, t)) first = t;
  if (first < 0) throw InputError("fa_mpjpe: no valid frames");
  SimilarityAlignment a = align_points(pred.frames[std::size_t(first)],
                                       gt.frames[std::size_t(first)], with_scale, true);
  double total = 0.0;
  int count = 0;
  for (int t = 0; t < pred.length(); ++t) {
    if (!frame_ok(valid, t)) continue;
    total += mean_row_error(a.apply(pred.frames[std::size_t(t)]), gt.frames[std::size_t(t)]);
    ++count;
  }
  return kMm * total / count;
}

double accel_error(const JointSequence& pred, const JointSequence& gt, const FrameMask* valid) {
  check_pair(pred, gt, valid);
  const int t_count = pred.length();
  if (t_count < 3) throw InputError("accel_error: need at least 3 frames");
  double total = 0.0;
  long count = 0;
  for (int t = 1; t + 1 < t_count; ++t) {
    if (!frame_ok(valid, t - 1) || !frame_ok(valid, t) || !frame_ok(valid, t + 1)) continue;
    MatX ap = pred.frames[std::size_t(t + 1)] - 2.0 * pred.frames[std::size_t(t)] +
              pred.frames[std::size_t(t - 1)];
    MatX ag = gt.frames[std::size_t(t + 1)] - 2.0 * gt.frames[std::size_t(t)] +
              gt.frames[std::size_t(t - 1)];
    total += (ap - ag).rowwise().norm().sum();
    count += pred.joints();
  }
  if (count == 0) throw InputError("accel_error: no fully valid second-difference window");
  return kMm * total / double(count);
}

double ate(const std::vector<SE3>& pred, const std::vector<SE3>& gt, const AteOptions& opts) {
  if (pred.size() != gt.size()) throw InputError("ate: trajectory length mismatch");
  if (pred.size() < 2) throw InputError("ate: need at least 2 poses");
  const long n = long(pred.size());
  MatX p(n, 3), g(n, 3);
  for (long i = 0; i < n; ++i) {
    p.row(i) = pred[std::size_t(i)].translation().transpose();
    g.row(i) = gt[std::size_t(i)].translation().transpose();
  }
  MatX residual;
  if (opts.align) {
    SimilarityAlignment a = align_points(p, g, opts.with_scale, false);
    residual = a.apply(p) - g;
  } else {
    residual = p - g;
  }
  return kMm * std::sqrt(residual.rowwise().squaredNorm().mean());
}

DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw InputError("depth_metrics: map shapes differ");
  DepthMetrics m;
  long count = 0;
  double sum_rel = 0.0, sum_sq = 0.0;
  long n1 = 0, n2 = 0, n3 = 0;
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  for (int row = 0; row < pred.height(); ++row)
    for (int col = 0; col < pred.width(); ++col) {
      if (!pred.valid(row, col) || !gt.valid(row, col)) continue;
      double p = pred.at(row, col), g = gt.at(row, col);
      double ratio = std::max(p / g, g / p);
      n1 += ratio < t1;
      n2 += ratio < t2;
      n3 += ratio < t3;
      sum_rel += std::abs(p - g) / g;
      sum_sq += (p - g) * (p - g);
      ++count;
    }
  if (count == 0) throw InputError("depth_metrics: no jointly valid pixels");
  m.delta1 = double(n1) / double(count);
  m.delta2 = double(n2) / double(count);
  m.delta3 = double(n3) / double(count);
  m.rel = sum_rel / double(count);
  m.rmse = std::sqrt(sum_sq / double(count));
  return m;
}

}  // namespace mhr
