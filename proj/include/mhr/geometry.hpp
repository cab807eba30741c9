#pragma once

#include <cmath>
#include <vector>

#include "mhr/common.hpp"

namespace mhr {

/// Unit quaternion, components ordered (w, x, y, z). Represents the same
/// rotation as its negation (double cover).
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  Quat() = default;
  Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

  static Quat identity() { return Quat(); }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }

  /// Normalized copy. Throws NumericError on a zero quaternion.
  Quat unit() const;

  Quat conjugate() const { return Quat(w, -x, -y, -z); }

  Quat operator-() const { return Quat(-w, -x, -y, -z); }

  /// Hamilton product.
  Quat operator*(const Quat& o) const {
    return Quat(w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w);
  }

  Vec3 rotate(const Vec3& v) const;

  /// Rotation matrix; assumes *this is unit length.
  Mat3 to_matrix() const;

  /// Shepperd's method; matrix must be a proper rotation.
  static Quat from_matrix(const Mat3& m);

  /// Axis-angle constructor; axis need not be normalized.
  static Quat from_axis_angle(const Vec3& axis, double angle);
};

/// Geodesic angle between the rotations represented by two unit quaternions.
double quat_angle(const Quat& a, const Quat& b);

/// Constant-speed spherical interpolation along the shortest arc.
/// Endpoints are returned exactly at t = 0 and t = 1. An exactly antipodal
/// pair (dot = -1) interpolates along the great circle through a fixed
/// direction orthogonal to q0's vector part, so the result is deterministic.
Quat quat_slerp(const Quat& q0, const Quat& q1, double t);

bool is_rotation_matrix(const Mat3& m, double tol = 1e-9);

/// Rotation angle of a rotation matrix, in [0, pi].
double rotation_angle(const Mat3& r);

/// Rigid transform in SE(3). Composition and point action are
/// y = R x + t. Values are immutable after construction.
class SE3 {
 public:
  SE3() : r_(Mat3::Identity()), t_(Vec3::Zero()) {}
  SE3(const Mat3& r, const Vec3& t) : r_(r), t_(t) {}
  SE3(const Quat& q, const Vec3& t) : r_(q.to_matrix()), t_(t) {}

  static SE3 identity() { return SE3(); }

  const Mat3& rotation() const { return r_; }
  const Vec3& translation() const { return t_; }
  Quat unit_quaternion() const { return Quat::from_matrix(r_); }

  SE3 operator*(const SE3& o) const { return SE3(r_ * o.r_, r_ * o.t_ + t_); }
  Vec3 operator*(const Vec3& p) const { return r_ * p + t_; }

  SE3 inverse() const { return SE3(r_.transpose(), -(r_.transpose() * t_)); }

  Eigen::Matrix4d matrix() const;

  /// Exponential map from the tangent (v, omega): translation first.
  static SE3 exp(const Vec6& xi);

  /// Inverse of exp; the rotation part lands in [0, pi].
  Vec6 log() const;

 private:
  Mat3 r_;
  Vec3 t_;
};

inline SE3 se3_compose(const SE3& a, const SE3& b) { return a * b; }
inline SE3 se3_inverse(const SE3& a) { return a.inverse(); }

/// G_ij = G_j * G_i^{-1}.
inline SE3 relative_pose(const SE3& gi, const SE3& gj) { return gj * gi.inverse(); }

/// Pinhole camera. The default focal policy is fx = fy = (W + H) / 2 with
/// the principal point at the image center.
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  static Intrinsics from_size(int w, int h) {
    Intrinsics k;
    k.fx = k.fy = 0.5 * double(w + h);
    k.cx = 0.5 * double(w);
    k.cy = 0.5 * double(h);
    k.width = w;
    k.height = h;
    return k;
  }

  void validate() const;
};

/// Perspective projection of a camera-frame point. Throws InputError when
/// z <= 0.
Vec2 project(const Intrinsics& intr, const Vec3& point);

/// Inverse projection at a given depth (z > 0, finite).
Vec3 unproject(const Intrinsics& intr, const Vec2& pixel, double depth);

/// Per-frame depth grid in meters. Invalid cells are NaN; valid cells are
/// strictly positive.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int height, int width)
      : d_(MatX::Constant(height, width, std::numeric_limits<double>::quiet_NaN())) {}
  explicit DepthMap(MatX values) : d_(std::move(values)) {}

  int height() const { return int(d_.rows()); }
  int width() const { return int(d_.cols()); }

  double at(int row, int col) const { return d_(row, col); }
  void set(int row, int col, double v) { d_(row, col) = v; }

  bool valid(int row, int col) const {
    double v = d_(row, col);
    return std::isfinite(v) && v > 0.0;
  }

  const MatX& values() const { return d_; }
  MatX& values() { return d_; }

 private:
  MatX d_;
};

/// Instance-id grid: 0 = background, n = human instance n. Ids form a
/// contiguous set {0..N}.
class InstanceMask {
 public:
  using Grid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

  InstanceMask() = default;
  InstanceMask(int height, int width) : m_(Grid::Zero(height, width)) {}
  explicit InstanceMask(Grid values) : m_(std::move(values)) {}

  int height() const { return int(m_.rows()); }
  int width() const { return int(m_.cols()); }

  std::uint8_t at(int row, int col) const { return m_(row, col); }
  void set(int row, int col, std::uint8_t v) { m_(row, col) = v; }

  /// Largest instance id present.
  int num_instances() const { return m_.size() ? int(m_.maxCoeff()) : 0; }

  /// Boolean union over all instances (any human).
  BoolGrid union_grid() const {
    return (m_.array() != 0).cast<std::uint8_t>().matrix();
  }

  /// Instance ids present must be contiguous {0..N}.
  void validate() const;

  const Grid& values() const { return m_; }

 private:
  Grid m_;
};

/// One 7-channel point: position, color in [0,1], and a {0,1} human flag.
struct CloudPoint {
  Vec3 xyz = Vec3::Zero();
  Vec3 rgb = Vec3::Zero();
  double human = 0.0;
};

class PointCloud {
 public:
  static constexpr int kChannels = 7;

  PointCloud() = default;

  void add(const CloudPoint& p) { pts_.push_back(p); }
  std::size_t size() const { return pts_.size(); }
  bool empty() const { return pts_.empty(); }

  const CloudPoint& operator[](std::size_t i) const { return pts_[i]; }
  CloudPoint& operator[](std::size_t i) { return pts_[i]; }

  auto begin() const { return pts_.begin(); }
  auto end() const { return pts_.end(); }

 private:
  std::vector<CloudPoint> pts_;
};

}  // namespace mhr
