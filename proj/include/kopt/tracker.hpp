#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kopt/camera.hpp"
#include "kopt/detector.hpp"
#include "kopt/errors.hpp"
#include "kopt/geometry.hpp"
#include "kopt/kinematics.hpp"
#include "kopt/parallel.hpp"
#include "kopt/rng.hpp"

namespace kopt {

struct Particle {
  Eigen::Vector3d omega{0, 0, 0};  // axis-angle, rad
  Eigen::Vector3d b{0, 0, 0};      // m
  double weight = 0.0;
};

enum class LikelihoodMode { sum, product };

struct TrackerConfig {
  int n_particles = 1000;
  Eigen::MatrixXd sigma_init = Eigen::MatrixXd::Zero(6, 6);  // over [omega, b]
  Eigen::MatrixXd sigma_wb = default_sigma_wb();
  double alpha = 0.01;  // 1/px^2 observation sharpness
  double resample_threshold = 0.5;
  RigidTransform T_cb_init;  // initial hand-eye, camera from (uncorrected) base
  CameraModel camera;
  LikelihoodMode likelihood = LikelihoodMode::sum;
  int threads = 1;

  static Eigen::MatrixXd default_sigma_wb() {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(6, 6);
    for (int i = 0; i < 3; ++i) s(i, i) = 5e-3 * 5e-3;  // rad^2
    for (int i = 3; i < 6; ++i) s(i, i) = 1e-3 * 1e-3;  // m^2
    return s;
  }

  void validate() const {
    if (n_particles < 2) throw ConfigError("tracker: need at least 2 particles");
    if (alpha <= 0) throw ConfigError("tracker: need alpha > 0");
    if (resample_threshold <= 0 || resample_threshold > 1)
      throw ConfigError("tracker: resample_threshold must lie in (0,1]");
    if (sigma_init.rows() != 6 || sigma_init.cols() != 6 || sigma_wb.rows() != 6 ||
        sigma_wb.cols() != 6)
      throw ConfigError("tracker: covariances must be 6x6");
  }
};

struct TrackerState {
  std::vector<Particle> particles;
  int t = 0;
  AxisAngleTransform estimate;  // last point estimate
  double ess = 0.0;
  bool weights_reset = false;  // set when a weighting step underflowed to zero
  bool resampled = false;
};

inline double effective_sample_size(const std::vector<Particle>& particles) {
  double s2 = 0.0;
  for (const Particle& p : particles) s2 += p.weight * p.weight;
  return s2 > 0 ? 1.0 / s2 : 0.0;
}

inline TrackerState init_tracker(const TrackerConfig& cfg, Rng& rng) {
  cfg.validate();
  const Eigen::MatrixXd sqrt_init = psd_sqrt(cfg.sigma_init);
  TrackerState state;
  state.particles.resize(static_cast<std::size_t>(cfg.n_particles));
  const double w0 = 1.0 / cfg.n_particles;
  for (Particle& p : state.particles) {
    const Eigen::VectorXd draw = sample_mvn(Eigen::VectorXd::Zero(6), sqrt_init, rng);
    p.omega = canonicalize_axis_angle(draw.head<3>());
    p.b = draw.tail<3>();
    p.weight = w0;
  }
  state.ess = effective_sample_size(state.particles);
  return state;
}

// Gaussian random walk on the lumped error; weights untouched.
inline void propagate(TrackerState& state, const Eigen::MatrixXd& sigma_wb, Rng& rng) {
  const Eigen::MatrixXd sqrt_wb = psd_sqrt(sigma_wb);
  for (Particle& p : state.particles) {
    const Eigen::VectorXd draw = sample_mvn(Eigen::VectorXd::Zero(6), sqrt_wb, rng);
    p.omega = canonicalize_axis_angle(p.omega + draw.head<3>());
    p.b += draw.tail<3>();
  }
}

// Pixel location of a keypoint under hand-eye o lumped-error o FK. Runs the
// same projection code path as the rest of the library.
inline std::optional<Eigen::Vector2d> reproject_keypoint(const KinematicChain& chain,
                                                         const JointConfig& q,
                                                         const TrackerConfig& cfg,
                                                         const Particle& particle,
                                                         const Keypoint& kp) {
  const RigidTransform t_total =
      cfg.T_cb_init * axis_angle_to_rigid({particle.omega, particle.b});
  return project_point(cfg.camera, t_total, chain.keypoint_base_position(q, kp));
}

// Observation update: likelihood per particle is the confidence-weighted sum
// (or product) of exp(-alpha * residual^2) over produced detections;
// behind-camera keypoints are skipped. Underflow to zero total weight resets
// to uniform and flags the event.
inline void weight_particles(TrackerState& state, const std::vector<Detection>& detections,
                             const KinematicChain& chain, const JointConfig& q,
                             const std::vector<Keypoint>& keypoints, const TrackerConfig& cfg) {
  state.weights_reset = false;
  std::vector<std::pair<const Detection*, const Keypoint*>> obs;
  for (const Detection& det : detections) {
    if (det.status != DetectionStatus::detected) continue;
    for (const Keypoint& kp : keypoints)
      if (kp.id == det.keypoint_id) {
        obs.emplace_back(&det, &kp);
        break;
      }
  }
  if (obs.empty()) return;

  const std::vector<RigidTransform> fk = chain.forward_kinematics(q);
  std::vector<Eigen::Vector3d> base_pts(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i)
    base_pts[i] = fk[static_cast<std::size_t>(obs[i].second->link)].apply(obs[i].second->offset);

  const int n = static_cast<int>(state.particles.size());
  std::vector<double> like(static_cast<std::size_t>(n), 0.0);
  parallel_for(n, cfg.threads, [&](int pi) {
    const Particle& p = state.particles[static_cast<std::size_t>(pi)];
    const RigidTransform t_total = cfg.T_cb_init * axis_angle_to_rigid({p.omega, p.b});
    double sum = 0.0, prod = 1.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const auto px = project_point(cfg.camera, t_total, base_pts[i]);
      if (!px) continue;
      const double r2 = (obs[i].first->pixel - *px).squaredNorm();
      const double term = obs[i].first->rho * std::exp(-cfg.alpha * r2);
      sum += term;
      prod *= term;
    }
    like[static_cast<std::size_t>(pi)] =
        cfg.likelihood == LikelihoodMode::sum ? sum : prod;
  });

  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    state.particles[static_cast<std::size_t>(i)].weight *= like[static_cast<std::size_t>(i)];
    total += state.particles[static_cast<std::size_t>(i)].weight;
  }
  if (total <= 0.0 || !std::isfinite(total)) {
    const double w0 = 1.0 / n;
    for (Particle& p : state.particles) p.weight = w0;
    state.weights_reset = true;
  } else {
    for (Particle& p : state.particles) p.weight /= total;
  }
  state.ess = effective_sample_size(state.particles);
}

// Systematic (low-variance) resampling when ESS drops below threshold * n.
inline void resample(TrackerState& state, double threshold, Rng& rng) {
  const int n = static_cast<int>(state.particles.size());
  state.ess = effective_sample_size(state.particles);
  state.resampled = false;
  if (state.ess >= threshold * n) return;

  const double step = 1.0 / n;
  double u = rng.uniform01() * step;
  std::vector<Particle> next;
  next.reserve(static_cast<std::size_t>(n));
  double acc = state.particles[0].weight;
  int idx = 0;
  for (int i = 0; i < n; ++i) {
    const double target = u + i * step;
    while (acc < target && idx + 1 < n) {
      ++idx;
      acc += state.particles[static_cast<std::size_t>(idx)].weight;
    }
    Particle p = state.particles[static_cast<std::size_t>(idx)];
    p.weight = step;
    next.push_back(p);
  }
  state.particles = std::move(next);
  state.resampled = true;
  state.ess = static_cast<double>(n);
}

// Weighted mean of b directly; omega averaged in a chart at the weighted-mode
// particle so representations near the +/- pi wrap do not cancel.
inline AxisAngleTransform estimate(const TrackerState& state) {
  const std::vector<Particle>& ps = state.particles;
  if (ps.empty()) throw ConfigError("estimate: no particles");
  double wsum = 0.0;
  std::size_t mode = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    wsum += ps[i].weight;
    if (ps[i].weight > ps[mode].weight) mode = i;
  }
  if (wsum <= 0.0) throw ConfigError("estimate: zero total weight");

  const Eigen::Vector3d omega_mode = ps[mode].omega;
  Eigen::Vector3d omega_acc{0, 0, 0}, b_acc{0, 0, 0};
  for (const Particle& p : ps) {
    Eigen::Vector3d best = p.omega;
    double best_d = (p.omega - omega_mode).squaredNorm();
    const double theta = p.omega.norm();
    if (theta > 0) {
      const Eigen::Vector3d axis = p.omega / theta;
      for (int k = -1; k <= 1; k += 2) {
        const Eigen::Vector3d cand = axis * (theta + 2.0 * M_PI * k);
        const double d = (cand - omega_mode).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = cand;
        }
      }
    }
    omega_acc += p.weight * best;
    b_acc += p.weight * p.b;
  }
  return {canonicalize_axis_angle(omega_acc / wsum), b_acc / wsum};
}

// One filter step: propagate -> weight (if any detections) -> resample ->
// estimate.
inline void track_step(TrackerState& state, const JointConfig& q,
                       const std::vector<Detection>& detections,
                       const std::vector<Keypoint>& keypoints, const KinematicChain& chain,
                       const TrackerConfig& cfg, Rng& rng) {
  propagate(state, cfg.sigma_wb, rng);
  weight_particles(state, detections, chain, q, keypoints, cfg);
  resample(state, cfg.resample_threshold, rng);
  state.estimate = estimate(state);
  ++state.t;
}

}  // namespace kopt
