#pragma once

#include <optional>

#include <Eigen/Core>

#include "kopt/errors.hpp"
#include "kopt/geometry.hpp"
#include "kopt/rng.hpp"

namespace kopt {

// Minimum admissible depth for projection; anything at or below is treated as
// behind the camera.
inline constexpr double kMinProjectionDepth = 1e-9;

struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  Eigen::Matrix3d intrinsics() const {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
  }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("camera image size must be positive");
  }
};

// Pinhole projection of a camera-frame point; nullopt when the point is at or
// behind the image plane.
inline std::optional<Eigen::Vector2d> project(const CameraModel& cam, const Eigen::Vector3d& p_cam) {
  const double z = p_cam.z();
  if (z <= kMinProjectionDepth) return std::nullopt;
  return Eigen::Vector2d(cam.fx * p_cam.x() / z + cam.cx, cam.fy * p_cam.y() / z + cam.cy);
}

// project(transform_point(...)) in one call so every caller shares the exact
// code path (and therefore bitwise-identical results).
inline std::optional<Eigen::Vector2d> project_point(const CameraModel& cam, const RigidTransform& t,
                                                    const Eigen::Vector3d& p) {
  return project(cam, transform_point(t, p));
}

// Additive Gaussian noise on the stacked [q, b] 7-vector, quaternion part
// renormalized afterwards. Order: [qw qx qy qz bx by bz].
class PosePerturber {
 public:
  PosePerturber(const RigidTransform& init, const Eigen::MatrixXd& sigma) : init_(init) {
    if (sigma.rows() != 7 || sigma.cols() != 7)
      throw std::invalid_argument("pose covariance must be 7x7");
    sqrt_ = psd_sqrt(sigma);
  }

  RigidTransform draw(Rng& rng) const {
    Eigen::VectorXd mean(7);
    mean << init_.q.w(), init_.q.x(), init_.q.y(), init_.q.z(), init_.b.x(), init_.b.y(),
        init_.b.z();
    const Eigen::VectorXd v = sample_mvn(mean, sqrt_, rng);
    Eigen::Quaterniond q(v[0], v[1], v[2], v[3]);
    const double n = q.norm();
    if (n < 1e-12) throw GenerationError("perturbed quaternion collapsed to zero");
    q.coeffs() /= n;
    return {q, Eigen::Vector3d(v[4], v[5], v[6])};
  }

 private:
  RigidTransform init_;
  Eigen::MatrixXd sqrt_;
};

inline RigidTransform perturb_pose(const RigidTransform& init, const Eigen::MatrixXd& sigma,
                                   Rng& rng) {
  return PosePerturber(init, sigma).draw(rng);
}

}  // namespace kopt
