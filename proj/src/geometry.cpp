#include "mhr/geometry.hpp"

#include <limits>

namespace mhr {

Quat Quat::unit() const {
  double n = norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw NumericError("cannot normalize a zero or non-finite quaternion");
  }
  return Quat(w / n, x / n, y / n, z / n);
}

Vec3 Quat::rotate(const Vec3& v) const {
  // q * (0, v) * q^-1 expanded.
  Vec3 u(x, y, z);
  Vec3 t = 2.0 * u.cross(v);
  return v + w * t + u.cross(t);
}

Mat3 Quat::to_matrix() const {
  Mat3 m;
  double xx = x * x, yy = y * y, zz = z * z;
  double xy = x * y, xz = x * z, yz = y * z;
  double wx = w * x, wy = w * y, wz = w * z;
  m << 1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
       2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
       2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy);
  return m;
}

Quat Quat::from_matrix(const Mat3& m) {
  double tr = m.trace();
  Quat q;
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (m(2, 1) - m(1, 2)) / s;
    q.y = (m(0, 2) - m(2, 0)) / s;
    q.z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    q.w = (m(2, 1) - m(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (m(0, 1) + m(1, 0)) / s;
    q.z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    q.w = (m(0, 2) - m(2, 0)) / s;
    q.x = (m(0, 1) + m(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (m(1, 2) + m(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    q.w = (m(1, 0) - m(0, 1)) / s;
    q.x = (m(0, 2) + m(2, 0)) / s;
    q.y = (m(1, 2) + m(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return q.unit();
}

Quat Quat::from_axis_angle(const Vec3& axis, double angle) {
  double n = axis.norm();
  if (n < 1e-300) return Quat::identity();
  Vec3 a = axis / n;
  double h = 0.5 * angle;
  double s = std::sin(h);
  return Quat(std::cos(h), a.x() * s, a.y() * s, a.z() * s);
}

double quat_angle(const Quat& a, const Quat& b) {
  double d = std::min(1.0, std::abs(a.dot(b)));
  return 2.0 * std::acos(d);
}

namespace {

// Fixed direction orthogonal to q's vector part, for the antipodal branch.
Quat orthogonal_direction(const Quat& q) {
  Vec3 v(q.x, q.y, q.z);
  if (v.norm() < 1e-12) return Quat(0, 1, 0, 0);
  int least = 0;
  Vec3 av = v.cwiseAbs();
  if (av.y() < av.x()) least = 1;
  if (av.z() < av(least)) least = 2;
  Vec3 e = Vec3::Zero();
  e(least) = 1.0;
  Vec3 axis = v.cross(e).normalized();
  return Quat(0, axis.x(), axis.y(), axis.z());
}

}  // namespace

Quat quat_slerp(const Quat& q0, const Quat& q1, double t) {
  double d = q0.dot(q1);

  if (d <= -1.0 + 1e-12) {
    // q1 == -q0: any great circle works, pick a fixed one.
    Quat u = orthogonal_direction(q0);
    double a = M_PI * t;
    double c = std::cos(a), s = std::sin(a);
    return Quat(c * q0.w + s * u.w, c * q0.x + s * u.x,
                c * q0.y + s * u.y, c * q0.z + s * u.z).unit();
  }

  Quat b = q1;
  if (d < 0.0) {
    b = -q1;
    d = -d;
  }
  if (d > 1.0 - 1e-12) {
    // Nearly parallel: linear blend keeps endpoints exact.
    Quat r(q0.w + t * (b.w - q0.w), q0.x + t * (b.x - q0.x),
           q0.y + t * (b.y - q0.y), q0.z + t * (b.z - q0.z));
    return r.unit();
  }
  double theta = std::acos(d);
  double sin_theta = std::sin(theta);
  double c0 = std::sin((1.0 - t) * theta) / sin_theta;
  double c1 = std::sin(t * theta) / sin_theta;
  return Quat(c0 * q0.w + c1 * b.w, c0 * q0.x + c1 * b.x,
              c0 * q0.y + c1 * b.y, c0 * q0.z + c1 * b.z).unit();
}

bool is_rotation_matrix(const Mat3& m, double tol) {
  return (m * m.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(m.determinant() - 1.0) < tol;
}

double rotation_angle(const Mat3& r) {
  double c = 0.5 * (r.trace() - 1.0);
  return std::acos(std::clamp(c, -1.0, 1.0));
}

Eigen::Matrix4d SE3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r_;
  m.topRightCorner<3, 1>() = t_;
  return m;
}

Vec6 SE3::log() const {
  double theta = rotation_angle(r_);
  Vec3 omega;
  if (theta < 1e-10) {
    Mat3 w = 0.5 * (r_ - r_.transpose());
    omega = Vec3(w(2, 1), w(0, 2), w(1, 0));
  } else if (theta > M_PI - 1e-7) {
    // Near pi the antisymmetric part degenerates. There R ~ 2aa' - I, so
    // (R + I)/2 ~ aa'; take the column with the largest diagonal as pivot.
    Mat3 s = 0.5 * (r_ + Mat3::Identity());
    int k = 0;
    if (s(1, 1) > s(0, 0)) k = 1;
    if (s(2, 2) > s(k, k)) k = 2;
    if (s(k, k) < 1e-12) throw NumericError("se3 log: degenerate rotation");
    Vec3 a;
    a[k] = std::sqrt(s(k, k));
    a[(k + 1) % 3] = s(k, (k + 1) % 3) / a[k];
    a[(k + 2) % 3] = s(k, (k + 2) % 3) / a[k];
    omega = theta * a.normalized();
  } else {
    Mat3 w = (theta / (2.0 * std::sin(theta))) * (r_ - r_.transpose());
    omega = Vec3(w(2, 1), w(0, 2), w(1, 0));
  }

  Mat3 hat;
  hat << 0, -omega.z(), omega.y(),
         omega.z(), 0, -omega.x(),
         -omega.y(), omega.x(), 0;
  Mat3 vmat;
  if (theta < 1e-10) {
    vmat = Mat3::Identity() + 0.5 * hat + (1.0 / 6.0) * hat * hat;
  } else {
    double t2 = theta * theta;
    vmat = Mat3::Identity() + ((1.0 - std::cos(theta)) / t2) * hat +
           ((theta - std::sin(theta)) / (t2 * theta)) * hat * hat;
  }
  Vec6 xi;
  xi.head<3>() = vmat.inverse() * t_;
  xi.tail<3>() = omega;
  return xi;
}

SE3 SE3::exp(const Vec6& xi) {
  Vec3 v = xi.head<3>();
  Vec3 omega = xi.tail<3>();
  double theta = omega.norm();

  Mat3 hat;
  hat << 0, -omega.z(), omega.y(),
         omega.z(), 0, -omega.x(),
         -omega.y(), omega.x(), 0;

  Mat3 r, vmat;
  if (theta < 1e-10) {
    r = Mat3::Identity() + hat + 0.5 * hat * hat;
    vmat = Mat3::Identity() + 0.5 * hat + (1.0 / 6.0) * hat * hat;
  } else {
    double t2 = theta * theta;
    r = Mat3::Identity() + (std::sin(theta) / theta) * hat +
        ((1.0 - std::cos(theta)) / t2) * hat * hat;
    vmat = Mat3::Identity() + ((1.0 - std::cos(theta)) / t2) * hat +
           ((theta - std::sin(theta)) / (t2 * theta)) * hat * hat;
  }
  return SE3(r, vmat * v);
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InputError("intrinsics: focal lengths must be positive");
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
    throw InputError("intrinsics: principal point must lie inside the image");
  }
}

Vec2 project(const Intrinsics& intr, const Vec3& point) {
  if (!(point.z() > 0.0)) {
    throw InputError("project: point is behind the camera (z <= 0)");
  }
  return Vec2(intr.fx * point.x() / point.z() + intr.cx,
              intr.fy * point.y() / point.z() + intr.cy);
}

Vec3 unproject(const Intrinsics& intr, const Vec2& pixel, double depth) {
  if (!(depth > 0.0) || !std::isfinite(depth)) {
    throw InputError("unproject: depth must be positive and finite");
  }
  return Vec3((pixel.x() - intr.cx) * depth / intr.fx,
              (pixel.y() - intr.cy) * depth / intr.fy, depth);
}

void InstanceMask::validate() const {
  int n = num_instances();
  std::vector<bool> seen(std::size_t(n) + 1, false);
  for (int r = 0; r < height(); ++r) {
    for (int c = 0; c < width(); ++c) seen[m_(r, c)] = true;
  }
  for (int i = 1; i <= n; ++i) {
    if (!seen[std::size_t(i)]) {
      throw InputError("instance mask: ids are not contiguous, missing id " + std::to_string(i));
    }
  }
}

}  // namespace mhr
