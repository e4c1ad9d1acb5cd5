#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kopt/camera.hpp"
#include "kopt/errors.hpp"
#include "kopt/geometry.hpp"
#include "kopt/io.hpp"
#include "kopt/kinematics.hpp"

namespace kopt {

struct PckCurve {
  std::vector<double> thresholds;
  std::vector<double> values;  // fraction of errors <= threshold
  double auc = 0.0;            // mean of values over the grid
};

// Fraction of errors within each threshold; AUC is the grid mean.
inline PckCurve pck(const std::vector<double>& errors, const std::vector<double>& thresholds) {
  if (errors.empty()) throw std::invalid_argument("pck: empty error list");
  if (thresholds.empty()) throw std::invalid_argument("pck: empty threshold grid");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1])
      throw std::invalid_argument("pck: thresholds must be ascending");
  PckCurve curve;
  curve.thresholds = thresholds;
  curve.values.reserve(thresholds.size());
  const double n = static_cast<double>(errors.size());
  double sum = 0.0;
  for (double t : thresholds) {
    long cnt = 0;
    for (double e : errors)
      if (e <= t) ++cnt;
    const double v = static_cast<double>(cnt) / n;
    curve.values.push_back(v);
    sum += v;
  }
  curve.auc = sum / static_cast<double>(thresholds.size());
  return curve;
}

inline std::vector<double> default_pck_grid_2d() {  // px
  std::vector<double> g;
  for (int t = 0; t <= 50; ++t) g.push_back(static_cast<double>(t));
  return g;
}

inline std::vector<double> default_pck_grid_3d_mm() {
  std::vector<double> g;
  for (int t = 0; t <= 200; t += 4) g.push_back(static_cast<double>(t));
  return g;
}

struct BitMask {
  int width = 0, height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  BitMask() = default;
  BitMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}
  std::uint8_t at(int x, int y) const {
    return bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                static_cast<std::size_t>(x)];
  }
  void set(int x, int y) {
    bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
         static_cast<std::size_t>(x)] = 1;
  }
  long count() const {
    long c = 0;
    for (std::uint8_t b : bits) c += b;
    return c;
  }
};

namespace mask_detail {

// Filled circle at (cx, cy) with radius r, pixel centers on integer grid.
inline void rasterize_circle(BitMask& mask, double cx, double cy, double r) {
  if (r <= 0) return;
  const int y_lo = std::max(0, static_cast<int>(std::ceil(cy - r)));
  const int y_hi = std::min(mask.height - 1, static_cast<int>(std::floor(cy + r)));
  for (int y = y_lo; y <= y_hi; ++y) {
    const double dy = static_cast<double>(y) - cy;
    const double span = r * r - dy * dy;
    if (span < 0) continue;
    const double dx = std::sqrt(span);
    const int x_lo = std::max(0, static_cast<int>(std::ceil(cx - dx)));
    const int x_hi = std::min(mask.width - 1, static_cast<int>(std::floor(cx + dx)));
    for (int x = x_lo; x <= x_hi; ++x) mask.set(x, y);
  }
}

}  // namespace mask_detail

// Capsule silhouettes as unions of projected spheres sampled along each axis
// at <= radius/2 spacing. Both compared masks come from this same renderer,
// so the sampling approximation cancels in IoU.
inline BitMask render_mask(const KinematicChain& chain, const JointConfig& q,
                           const RigidTransform& t_cb, const CameraModel& cam) {
  BitMask mask(cam.width, cam.height);
  const std::vector<RigidTransform> fk = chain.forward_kinematics(q);
  for (std::size_t li = 0; li < chain.links().size(); ++li) {
    for (const Capsule& cap : chain.links()[li].capsules) {
      const Eigen::Vector3d a = t_cb.apply(fk[li].apply(cap.a));
      const Eigen::Vector3d b = t_cb.apply(fk[li].apply(cap.b));
      const double len = (b - a).norm();
      const int nseg = std::max(1, static_cast<int>(std::ceil(len / (cap.radius / 2.0))));
      for (int i = 0; i <= nseg; ++i) {
        const Eigen::Vector3d c = a + (static_cast<double>(i) / nseg) * (b - a);
        if (c.z() <= kMinProjectionDepth) continue;
        const double u = cam.fx * c.x() / c.z() + cam.cx;
        const double v = cam.fy * c.y() / c.z() + cam.cy;
        mask_detail::rasterize_circle(mask, u, v, cam.fx * cap.radius / c.z());
      }
    }
  }
  return mask;
}

// Jaccard index; two empty masks agree perfectly.
inline double iou(const BitMask& g, const BitMask& p) {
  if (g.width != p.width || g.height != p.height)
    throw std::invalid_argument("iou: mask dimensions differ");
  long inter = 0, uni = 0;
  for (std::size_t i = 0; i < g.bits.size(); ++i) {
    const bool bg = g.bits[i] != 0, bp = p.bits[i] != 0;
    inter += (bg && bp) ? 1 : 0;
    uni += (bg || bp) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double ee_3d_error(const RigidTransform& t, const Eigen::Vector3d& x_b_ee,
                          const Eigen::Vector3d& x_c_ee_true) {
  return (t.apply(x_b_ee) - x_c_ee_true).norm();
}

inline double reprojection_error_ee(const RigidTransform& t, const Eigen::Vector3d& x_b_ee,
                                    const Eigen::Vector2d& h_ee_true, const CameraModel& cam) {
  const auto px = project_point(cam, t, x_b_ee);
  if (!px)
    throw PnpError(PnpError::Kind::behind_camera, "reprojection_error_ee: point behind camera");
  return (*px - h_ee_true).norm();
}

// Binary PGM (P5), foreground = 255.
inline void write_pgm(const BitMask& mask, const std::string& path) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) +
                    "\n255\n";
  out.reserve(out.size() + mask.bits.size());
  for (std::uint8_t b : mask.bits) out.push_back(b ? static_cast<char>(255) : '\0');
  write_text_file(path, out);
}

inline json pck_to_json(const PckCurve& c) {
  return json{{"thresholds", c.thresholds}, {"values", c.values}, {"auc", c.auc}};
}

}  // namespace kopt
