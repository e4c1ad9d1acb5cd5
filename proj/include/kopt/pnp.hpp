#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "kopt/camera.hpp"
#include "kopt/errors.hpp"
#include "kopt/geometry.hpp"

namespace kopt {

struct Correspondence {
  Eigen::Vector2d image_point{0, 0};
  Eigen::Vector3d base_point{0, 0, 0};
  double weight = 1.0;
};

struct PoseEstimate {
  RigidTransform T;  // camera from base
  double reprojection_rmse = 0.0;
};

// Weighted RMS pixel residual; +inf when the pose puts any point at or
// behind the image plane.
inline double reprojection_rmse(const RigidTransform& t, const std::vector<Correspondence>& corrs,
                                const CameraModel& cam) {
  double sum = 0.0, wsum = 0.0;
  for (const Correspondence& c : corrs) {
    const auto px = project_point(cam, t, c.base_point);
    if (!px) return std::numeric_limits<double>::infinity();
    sum += c.weight * (*px - c.image_point).squaredNorm();
    wsum += c.weight;
  }
  if (wsum <= 0.0) return 0.0;
  return std::sqrt(sum / wsum);
}

namespace epnp_detail {

// (k, l) column order for the beta product vector: b11 b12 b22 b13 b23 b33 ...
inline std::vector<std::pair<int, int>> beta_columns(int nv) {
  std::vector<std::pair<int, int>> cols;
  for (int l = 0; l < nv; ++l)
    for (int k = 0; k <= l; ++k) cols.emplace_back(k, l);
  return cols;
}

inline std::vector<std::pair<int, int>> control_pairs(int m) {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) out.emplace_back(i, j);
  return out;
}

struct NullBasis {
  // Each column set v[k] holds m 3-vectors (one per control point).
  std::vector<Eigen::MatrixXd> v;  // nv entries of shape m x 3
  int m = 0;
};

// Sum of beta-weighted basis vectors -> camera-frame control points.
inline Eigen::MatrixXd control_points_from_betas(const NullBasis& basis, const Eigen::VectorXd& betas) {
  Eigen::MatrixXd ccs = Eigen::MatrixXd::Zero(basis.m, 3);
  for (int k = 0; k < static_cast<int>(basis.v.size()); ++k) ccs += betas[k] * basis.v[k];
  return ccs;
}

// Gauss-Newton on the inter-control-point distance residuals.
inline Eigen::VectorXd refine_betas(const NullBasis& basis, const Eigen::VectorXd& dist2,
                                    Eigen::VectorXd betas, int iterations = 8) {
  const auto pairs = control_pairs(basis.m);
  const int nv = static_cast<int>(basis.v.size());
  for (int it = 0; it < iterations; ++it) {
    Eigen::MatrixXd jac(pairs.size(), nv);
    Eigen::VectorXd res(pairs.size());
    const Eigen::MatrixXd ccs = control_points_from_betas(basis, betas);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const Eigen::Vector3d diff = ccs.row(pairs[p].first) - ccs.row(pairs[p].second);
      res[p] = diff.squaredNorm() - dist2[static_cast<Eigen::Index>(p)];
      for (int k = 0; k < nv; ++k) {
        const Eigen::Vector3d dv =
            basis.v[k].row(pairs[p].first) - basis.v[k].row(pairs[p].second);
        jac(static_cast<Eigen::Index>(p), k) = 2.0 * diff.dot(dv);
      }
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd delta = jtj.ldlt().solve(-jac.transpose() * res);
    if (!delta.allFinite()) break;
    betas += delta;
    if (delta.norm() < 1e-14) break;
  }
  return betas;
}

}  // namespace epnp_detail

// EPnP: camera pose from >= 4 2D-3D correspondences via the control-point
// formulation, with the 3-control-point branch for planar point sets. The
// candidate with minimum reprojection RMSE among the admissible (all points
// in front) beta solutions is returned.
inline PoseEstimate epnp(const std::vector<Correspondence>& corrs, const CameraModel& cam) {
  const int n = static_cast<int>(corrs.size());
  if (n < 4)
    throw PnpError(PnpError::Kind::too_few_points,
                   "epnp needs at least 4 correspondences, got " + std::to_string(n));

  Eigen::MatrixXd pts(n, 3);
  for (int i = 0; i < n; ++i) pts.row(i) = corrs[static_cast<std::size_t>(i)].base_point;
  const Eigen::RowVector3d centroid = pts.colwise().mean();
  const Eigen::MatrixXd centered = pts.rowwise() - centroid;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::Vector3d sv = svd.singularValues();
  const double rms_scale = std::sqrt(static_cast<double>(n));
  if (sv[1] / rms_scale < 1e-6)
    throw PnpError(PnpError::Kind::degenerate, "epnp: base points are (near-)collinear");
  const bool planar = sv[2] / rms_scale < 1e-6;
  const int m = planar ? 3 : 4;

  // World control points: centroid plus principal axes at RMS extent.
  Eigen::MatrixXd cws(m, 3);
  cws.row(0) = centroid;
  for (int k = 1; k < m; ++k)
    cws.row(k) = centroid + (sv[k - 1] / rms_scale) * svd.matrixV().col(k - 1).transpose();

  // Barycentric coordinates of every point w.r.t. the control points.
  Eigen::MatrixXd alphas(n, m);
  if (!planar) {
    Eigen::Matrix3d basis;
    for (int k = 0; k < 3; ++k) basis.col(k) = (cws.row(k + 1) - cws.row(0)).transpose();
    const Eigen::Matrix3d inv = basis.inverse();
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d a = inv * (pts.row(i) - cws.row(0)).transpose();
      alphas(i, 1) = a[0];
      alphas(i, 2) = a[1];
      alphas(i, 3) = a[2];
      alphas(i, 0) = 1.0 - a.sum();
    }
  } else {
    Eigen::Matrix<double, 3, 2> basis;
    basis.col(0) = (cws.row(1) - cws.row(0)).transpose();
    basis.col(1) = (cws.row(2) - cws.row(0)).transpose();
    const Eigen::Matrix2d gram = basis.transpose() * basis;
    const Eigen::Matrix2d gram_inv = gram.inverse();
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d a =
          gram_inv * (basis.transpose() * (pts.row(i) - cws.row(0)).transpose());
      alphas(i, 1) = a[0];
      alphas(i, 2) = a[1];
      alphas(i, 0) = 1.0 - a.sum();
    }
  }

  // M x = 0 with x the stacked camera-frame control points.
  Eigen::MatrixXd mmat = Eigen::MatrixXd::Zero(2 * n, 3 * m);
  for (int i = 0; i < n; ++i) {
    const Correspondence& c = corrs[static_cast<std::size_t>(i)];
    const double w = std::sqrt(std::max(c.weight, 0.0));
    for (int j = 0; j < m; ++j) {
      const double a = alphas(i, j);
      mmat(2 * i, 3 * j) = w * a * cam.fx;
      mmat(2 * i, 3 * j + 2) = w * a * (cam.cx - c.image_point.x());
      mmat(2 * i + 1, 3 * j + 1) = w * a * cam.fy;
      mmat(2 * i + 1, 3 * j + 2) = w * a * (cam.cy - c.image_point.y());
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mmat.transpose() * mmat);
  const int nv = planar ? 3 : 4;  // null-space vectors kept, smallest first
  epnp_detail::NullBasis basis;
  basis.m = m;
  for (int k = 0; k < nv; ++k) {
    Eigen::MatrixXd vk(m, 3);
    for (int j = 0; j < m; ++j) vk.row(j) = es.eigenvectors().col(k).segment<3>(3 * j).transpose();
    basis.v.push_back(std::move(vk));
  }

  const auto pairs = epnp_detail::control_pairs(m);
  Eigen::VectorXd dist2(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p)
    dist2[static_cast<Eigen::Index>(p)] =
        (cws.row(pairs[p].first) - cws.row(pairs[p].second)).squaredNorm();

  // L * beta_products = dist2 for the approximate beta starts.
  const auto bcols = epnp_detail::beta_columns(nv);
  Eigen::MatrixXd lmat(pairs.size(), bcols.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (std::size_t c = 0; c < bcols.size(); ++c) {
      const auto [k, l] = bcols[c];
      const Eigen::Vector3d dk = basis.v[static_cast<std::size_t>(k)].row(pairs[p].first) -
                                 basis.v[static_cast<std::size_t>(k)].row(pairs[p].second);
      const Eigen::Vector3d dl = basis.v[static_cast<std::size_t>(l)].row(pairs[p].first) -
                                 basis.v[static_cast<std::size_t>(l)].row(pairs[p].second);
      lmat(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) =
          (k == l ? 1.0 : 2.0) * dk.dot(dl);
    }
  }
  const auto col_of = [&](int k, int l) {
    for (std::size_t c = 0; c < bcols.size(); ++c)
      if (bcols[c].first == std::min(k, l) && bcols[c].second == std::max(k, l))
        return static_cast<Eigen::Index>(c);
    return Eigen::Index(-1);
  };
  const auto solve_ls = [&](const std::vector<Eigen::Index>& cols) {
    Eigen::MatrixXd sub(lmat.rows(), cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = lmat.col(cols[c]);
    return Eigen::VectorXd(sub.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(dist2));
  };

  std::vector<Eigen::VectorXd> starts;
  {
    // case 1: x ~ beta1 * v1
    std::vector<Eigen::Index> cols{col_of(0, 0), col_of(0, 1), col_of(0, 2)};
    if (nv == 4) cols.push_back(col_of(0, 3));
    const Eigen::VectorXd b = solve_ls(cols);
    Eigen::VectorXd betas = Eigen::VectorXd::Zero(nv);
    const double sign = b[0] < 0 ? -1.0 : 1.0;
    betas[0] = std::sqrt(std::abs(b[0]));
    if (betas[0] > 0)
      for (int k = 1; k < nv; ++k) betas[k] = sign * b[k] / betas[0];
    starts.push_back(betas);
  }
  {
    // case 2: two vectors, unknowns (b11, b12, b22)
    const Eigen::VectorXd b = solve_ls({col_of(0, 0), col_of(0, 1), col_of(1, 1)});
    Eigen::VectorXd betas = Eigen::VectorXd::Zero(nv);
    if (b[0] < 0) {
      betas[0] = std::sqrt(-b[0]);
      betas[1] = b[2] < 0 ? std::sqrt(-b[2]) : 0.0;
    } else {
      betas[0] = std::sqrt(b[0]);
      betas[1] = b[2] > 0 ? std::sqrt(b[2]) : 0.0;
    }
    if (b[1] < 0) betas[0] = -betas[0];
    starts.push_back(betas);
  }
  if (nv == 4) {
    // case 3: unknowns (b11, b12, b22, b13, b23)
    const Eigen::VectorXd b =
        solve_ls({col_of(0, 0), col_of(0, 1), col_of(1, 1), col_of(0, 2), col_of(1, 2)});
    Eigen::VectorXd betas = Eigen::VectorXd::Zero(nv);
    if (b[0] < 0) {
      betas[0] = std::sqrt(-b[0]);
      betas[1] = b[2] < 0 ? std::sqrt(-b[2]) : 0.0;
    } else {
      betas[0] = std::sqrt(b[0]);
      betas[1] = b[2] > 0 ? std::sqrt(b[2]) : 0.0;
    }
    if (b[1] < 0) betas[0] = -betas[0];
    if (betas[0] != 0.0) betas[2] = b[3] / betas[0];
    starts.push_back(betas);
  }

  // With few points the null space is wide and every component of beta can be
  // significant, so the truncated analytic cases may all start in the wrong
  // basin. Add scale-fitted canonical and diagonal directions as extra starts.
  const auto scale_to_distances = [&](Eigen::VectorXd dir) {
    const Eigen::MatrixXd ccs = epnp_detail::control_points_from_betas(basis, dir);
    double num = 0.0, den = 0.0;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const double d = (ccs.row(pairs[p].first) - ccs.row(pairs[p].second)).squaredNorm();
      num += d * dist2[static_cast<Eigen::Index>(p)];
      den += d * d;
    }
    const double s2 = den > 0.0 ? num / den : 1.0;
    return Eigen::VectorXd(dir * std::sqrt(std::max(s2, 0.0)));
  };
  for (int k = 0; k < nv; ++k) {
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(nv);
    dir[k] = 1.0;
    starts.push_back(scale_to_distances(dir));
    starts.push_back(scale_to_distances(-dir));
  }
  for (int pattern = 0; pattern < (1 << (nv - 1)); ++pattern) {
    Eigen::VectorXd dir = Eigen::VectorXd::Ones(nv);
    for (int k = 1; k < nv; ++k)
      if (pattern & (1 << (k - 1))) dir[k] = -1.0;
    starts.push_back(scale_to_distances(dir));
  }

  PoseEstimate best;
  best.reprojection_rmse = std::numeric_limits<double>::infinity();
  for (const Eigen::VectorXd& start : starts) {
    const Eigen::VectorXd betas = epnp_detail::refine_betas(basis, dist2, start);
    Eigen::MatrixXd ccs = epnp_detail::control_points_from_betas(basis, betas);
    Eigen::MatrixXd pcs = alphas * ccs;  // n x 3 camera-frame points
    if (pcs.col(2).mean() < 0.0) {
      ccs = -ccs;
      pcs = -pcs;
    }
    const Eigen::Matrix4d tf =
        Eigen::umeyama(pts.transpose(), Eigen::MatrixXd(pcs.transpose()), false);
    RigidTransform t{Eigen::Quaterniond(Eigen::Matrix3d(tf.block<3, 3>(0, 0))).normalized(),
                     tf.block<3, 1>(0, 3)};
    const double rmse = reprojection_rmse(t, corrs, cam);
    if (rmse < best.reprojection_rmse) best = {t, rmse};
  }
  if (!std::isfinite(best.reprojection_rmse))
    throw PnpError(PnpError::Kind::behind_camera,
                   "epnp: no candidate places all points in front of the camera");
  return best;
}

// Gauss-Newton on SE(3) over the weighted reprojection residuals. Tracks the
// best pose seen; stops early after three consecutive RMSE increases.
inline PoseEstimate refine_pose(const PoseEstimate& initial, const std::vector<Correspondence>& corrs,
                                const CameraModel& cam, int iters) {
  if (iters <= 0) return initial;
  RigidTransform t = initial.T;
  PoseEstimate best{t, reprojection_rmse(t, corrs, cam)};
  int rising = 0;
  double prev = best.reprojection_rmse;
  for (int it = 0; it < iters; ++it) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    int used = 0;
    for (const Correspondence& c : corrs) {
      const Eigen::Vector3d y = t.apply(c.base_point);
      if (y.z() <= kMinProjectionDepth) continue;
      const double z = y.z();
      Eigen::Matrix<double, 2, 3> proj;
      proj << cam.fx / z, 0, -cam.fx * y.x() / (z * z), 0, cam.fy / z, -cam.fy * y.y() / (z * z);
      Eigen::Matrix3d skew;
      skew << 0, -y.z(), y.y(), y.z(), 0, -y.x(), -y.y(), y.x(), 0;
      Eigen::Matrix<double, 3, 6> dy;  // left increment: d(exp(dw) y + db)
      dy.block<3, 3>(0, 0) = -skew;
      dy.block<3, 3>(0, 3) = Eigen::Matrix3d::Identity();
      const Eigen::Matrix<double, 2, 6> jac = proj * dy;
      const Eigen::Vector2d res(cam.fx * y.x() / z + cam.cx - c.image_point.x(),
                                cam.fy * y.y() / z + cam.cy - c.image_point.y());
      jtj += c.weight * jac.transpose() * jac;
      jtr += c.weight * jac.transpose() * res;
      ++used;
    }
    if (used == 0) break;
    const Eigen::Matrix<double, 6, 1> delta = jtj.ldlt().solve(-jtr);
    if (!delta.allFinite()) break;
    const RigidTransform inc = axis_angle_to_rigid({delta.head<3>(), delta.tail<3>()});
    t = {(inc.q * t.q).normalized(), inc.q * t.b + inc.b};
    const double rmse = reprojection_rmse(t, corrs, cam);
    if (rmse < best.reprojection_rmse) best = {t, rmse};
    rising = rmse > prev ? rising + 1 : 0;
    prev = rmse;
    if (rising >= 3) break;
    if (rmse < 1e-14) break;
  }
  return best;
}

}  // namespace kopt
