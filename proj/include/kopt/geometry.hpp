#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace kopt {

// Rigid body transform as unit quaternion + translation. Composition order is
// the usual matrix convention: (a * b).apply(p) == a.apply(b.apply(p)).
struct RigidTransform {
  Eigen::Quaterniond q{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d b{0.0, 0.0, 0.0};

  static RigidTransform identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return q * p + b; }

  RigidTransform inverse() const {
    const Eigen::Quaterniond qi = q.conjugate();
    return {qi, -(qi * b)};
  }

  Eigen::Matrix3d rotation() const { return q.toRotationMatrix(); }
};

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  return {(a.q * b.q).normalized(), a.q * b.b + a.b};
}

inline Eigen::Vector3d transform_point(const RigidTransform& t, const Eigen::Vector3d& p) {
  return t.apply(p);
}

// Lumped-error coordinates: rotation as an axis-angle vector, plus translation.
struct AxisAngleTransform {
  Eigen::Vector3d omega{0.0, 0.0, 0.0};
  Eigen::Vector3d b{0.0, 0.0, 0.0};
};

// Wraps the rotation angle into (-pi, pi], giving each rotation a unique
// representative with |omega| <= pi.
inline Eigen::Vector3d canonicalize_axis_angle(const Eigen::Vector3d& omega) {
  const double theta = omega.norm();
  if (theta <= M_PI) return omega;
  const double wrapped = std::remainder(theta, 2.0 * M_PI);
  return omega * (wrapped / theta);
}

inline RigidTransform axis_angle_to_rigid(const AxisAngleTransform& a) {
  const double theta = a.omega.norm();
  if (theta < 1e-300) return {Eigen::Quaterniond::Identity(), a.b};
  const Eigen::Vector3d axis = a.omega / theta;
  return {Eigen::Quaterniond(Eigen::AngleAxisd(theta, axis)), a.b};
}

inline AxisAngleTransform rigid_to_axis_angle(const RigidTransform& t) {
  Eigen::Quaterniond q = t.q.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Eigen::Vector3d v(q.x(), q.y(), q.z());
  const double sin_half = v.norm();
  AxisAngleTransform out;
  out.b = t.b;
  if (sin_half < 1e-12) {
    out.omega = 2.0 * v;  // first-order around identity
  } else {
    const double theta = 2.0 * std::atan2(sin_half, q.w());
    out.omega = (theta / sin_half) * v;
  }
  return out;
}

inline bool is_rotation_orthonormal(const Eigen::Matrix3d& r, double tol = 1e-9) {
  const double err = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return err <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

}  // namespace kopt
