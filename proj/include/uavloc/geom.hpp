#pragma once

// Rigid transforms, the pinhole camera, Euler-angle extraction and the
// camera-frame gravity direction.
//
// World frame is ENU-like with +z up. Camera frame is x right, y down,
// z forward. Poses map world points into the camera: x_cam = R * X + t.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "uavloc/error.hpp"

namespace uavloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

inline double deg2rad(double deg) { return deg * kDegToRad; }
inline double rad2deg(double rad) { return rad * kRadToDeg; }

/// Wraps an angle in degrees to (-180, 180].
inline double wrap_deg(double a) {
  double w = std::fmod(a, 360.0);
  if (w <= -180.0) w += 360.0;
  if (w > 180.0) w -= 360.0;
  return w;
}

/// Absolute difference on the circle, in [0, 180].
inline double angle_distance_deg(double a, double b) { return std::abs(wrap_deg(a - b)); }

inline bool is_rotation(const Mat3& R, double tol = 1e-9) {
  if (!R.allFinite()) return false;
  if (std::abs(R.determinant() - 1.0) > tol) return false;
  return ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol);
}

/// Camera-from-world rigid transform.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const Mat3& R, const Vec3& t) : rotation(R), translation(t) {}

  static Pose from_center(const Mat3& R, const Vec3& center) { return Pose(R, -R * center); }

  static Pose from_quaternion(double qw, double qx, double qy, double qz, const Vec3& t) {
    Eigen::Quaterniond q(qw, qx, qy, qz);
    q.normalize();
    return Pose(q.toRotationMatrix(), t);
  }

  Eigen::Quaterniond quaternion() const {
    Eigen::Quaterniond q(rotation);
    q.normalize();
    // Canonical sign so that serialization is unambiguous.
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    return q;
  }

  Vec3 center() const { return -rotation.transpose() * translation; }

  Vec3 transform(const Vec3& X) const { return rotation * X + translation; }

  Pose inverse() const { return Pose(rotation.transpose(), -rotation.transpose() * translation); }

  bool is_valid(double tol = 1e-9) const { return is_rotation(rotation, tol) && translation.allFinite(); }

  /// Composition: (a * b)(X) = a(b(X)).
  friend Pose operator*(const Pose& a, const Pose& b) {
    return Pose(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
  }
};

struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  bool is_valid() const {
    return fx > 0.0 && fy > 0.0 && cx > 0.0 && cx < width && cy > 0.0 && cy < height && std::isfinite(fx) &&
           std::isfinite(fy);
  }

  /// Pixel centers sit at integer coordinates, so the valid image area is
  /// [0, width-1] x [0, height-1].
  bool contains(const Vec2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width - 1 && px.y() <= height - 1;
  }

  /// Unnormalized ray direction in the camera frame, z = 1.
  Vec3 ray(const Vec2& px) const { return Vec3((px.x() - cx) / fx, (px.y() - cy) / fy, 1.0); }

  /// Symmetric camera with the principal point at the image center.
  static Intrinsics centered(int width, int height, double focal) {
    return Intrinsics{focal, focal, 0.5 * (width - 1), 0.5 * (height - 1), width, height};
  }
};

inline void require_valid(const Intrinsics& K) {
  if (!K.is_valid()) throw Error(Errc::kInvalidArgument, "invalid intrinsics");
}

/// Euler angles in degrees, labelled as in the retrieval pre-filter:
/// roll = -asin(R31), yaw = atan2(R21, R11), pitch = atan2(R32, R33).
/// In ZYX terms, R = Rz(yaw) * Ry(roll) * Rx(pitch).
struct RotationAngles {
  double roll = 0.0;
  double yaw = 0.0;
  double pitch = 0.0;
};

inline constexpr double kGimbalLockTolerance = 1e-9;

inline RotationAngles euler_from_rotation(const Mat3& R) {
  const double r31 = R(2, 0);
  if (!(std::abs(r31) < 1.0 - kGimbalLockTolerance)) {
    throw Error(Errc::kGimbalLock, "|R31| = " + std::to_string(std::abs(r31)));
  }
  RotationAngles a;
  a.roll = wrap_deg(rad2deg(-std::asin(r31)));
  a.yaw = wrap_deg(rad2deg(std::atan2(R(1, 0), R(0, 0))));
  a.pitch = wrap_deg(rad2deg(std::atan2(R(2, 1), R(2, 2))));
  return a;
}

inline Mat3 rotation_from_angles(const RotationAngles& a) {
  const Mat3 Rz = Eigen::AngleAxisd(deg2rad(a.yaw), Vec3::UnitZ()).toRotationMatrix();
  const Mat3 Ry = Eigen::AngleAxisd(deg2rad(a.roll), Vec3::UnitY()).toRotationMatrix();
  const Mat3 Rx = Eigen::AngleAxisd(deg2rad(a.pitch), Vec3::UnitX()).toRotationMatrix();
  return Rz * Ry * Rx;
}

/// Euler angles of the camera orientation in the world frame, i.e. of the
/// world-from-camera rotation. This is the decomposition used for reference
/// render angles and sensor priors: a level camera has R31 = 0 here, whereas
/// the camera-from-world matrix of a level camera facing +x hits gimbal lock.
inline RotationAngles attitude_angles(const Mat3& camera_from_world) {
  return euler_from_rotation(camera_from_world.transpose());
}

inline Mat3 rotation_from_attitude(const RotationAngles& a) { return rotation_from_angles(a).transpose(); }

/// Camera-from-world rotation for a zero-roll camera whose optical axis has
/// compass heading `heading_deg` (counter-clockwise from +x) and is tilted
/// `tilt_deg` below the horizon (0 = level, 90 = nadir).
inline Mat3 look_rotation(double heading_deg, double tilt_deg) {
  const double h = deg2rad(heading_deg);
  const double p = deg2rad(tilt_deg);
  const Vec3 forward(std::cos(p) * std::cos(h), std::cos(p) * std::sin(h), -std::sin(p));
  const Vec3 right(std::sin(h), -std::cos(h), 0.0);
  const Vec3 down = forward.cross(right);
  Mat3 R;
  R.row(0) = right.transpose();
  R.row(1) = down.transpose();
  R.row(2) = forward.transpose();
  return R;
}

struct Projection {
  Vec2 pixel;
  double depth = 0.0;
};

inline constexpr double kMinProjectionDepth = 1e-9;

inline std::optional<Projection> try_project(const Pose& pose, const Intrinsics& K, const Vec3& X) {
  const Vec3 p = pose.transform(X);
  if (!(p.z() > kMinProjectionDepth)) return std::nullopt;
  return Projection{Vec2(K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy), p.z()};
}

inline Projection project(const Pose& pose, const Intrinsics& K, const Vec3& X) {
  auto proj = try_project(pose, K, X);
  if (!proj) throw Error(Errc::kBehindCamera, "point has non-positive camera depth");
  return *proj;
}

/// Back-projects a pixel with optical-axis depth into the world.
inline Vec3 unproject(const Pose& pose, const Intrinsics& K, const Vec2& pixel, double depth) {
  if (!(depth > 0.0) || !std::isfinite(depth)) {
    throw Error(Errc::kInvalidDepth, "depth must be positive and finite");
  }
  const Vec3 p_cam = K.ray(pixel) * depth;
  return pose.rotation.transpose() * (p_cam - pose.translation);
}

/// World down (0, 0, -1) expressed in the camera frame.
inline Vec3 gravity_direction(const Mat3& camera_from_world) {
  return (camera_from_world * Vec3(0.0, 0.0, -1.0)).normalized();
}

/// Rotation reported by the UAV's inertial sensors (camera-from-world).
struct SensorPrior {
  Mat3 rotation = Mat3::Identity();
  std::optional<RotationAngles> angles;

  /// Attitude angles used for the retrieval pre-filter; the stored angles
  /// win when present.
  RotationAngles attitude() const { return angles ? *angles : attitude_angles(rotation); }
};

/// Rotation angle of R_a * R_b^T in degrees, in [0, 180].
///
/// Same value as arccos((trace - 1) / 2); the two-argument form keeps full
/// precision for angles near zero where arccos flattens out.
inline double rotation_angle_between_deg(const Mat3& a, const Mat3& b) {
  const Mat3 M = a * b.transpose();
  const double c = std::clamp((M.trace() - 1.0) * 0.5, -1.0, 1.0);
  const Vec3 v(M(2, 1) - M(1, 2), M(0, 2) - M(2, 0), M(1, 0) - M(0, 1));
  return rad2deg(std::atan2(0.5 * v.norm(), c));
}

}  // namespace uavloc
