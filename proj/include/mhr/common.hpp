#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mhr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// Boolean pixel grid (0 = false, nonzero = true).
using BoolGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Bad input: malformed files, shape mismatches, violated preconditions.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical failure: non-finite energies, singular systems, non-convergence.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// SplitMix64: the fixed pseudo-random generator used for all synthetic data
/// and weight initialization. Chosen over the platform default so fixtures
/// are stable across standard libraries.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + int(next_u64() % std::uint64_t(hi_inclusive - lo + 1));
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Vec3 normal_vec3() {
    Vec3 v;
    v << normal(), normal(), normal();
    return v;
  }

  /// Unit vector uniform on the sphere.
  Vec3 unit_vec3() {
    Vec3 v = normal_vec3();
    while (v.norm() < 1e-12) v = normal_vec3();
    return v.normalized();
  }

 private:
  std::uint64_t state_;
};

}  // namespace mhr
