#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "kopt/camera.hpp"
#include "kopt/dataset.hpp"
#include "kopt/detector.hpp"
#include "kopt/errors.hpp"
#include "kopt/kinematics.hpp"
#include "kopt/parallel.hpp"
#include "kopt/rng.hpp"

namespace kopt {

namespace datagen_detail {

inline double norm01(double v, double lo, double hi) {
  return hi > lo ? (v - lo) / (hi - lo) : 0.0;
}

// Frozen per-sample draw order: joints, camera pose (7 normals), lights,
// distractors, image noise, color noise. Each sample owns an independent
// stream, so generation is parallelism-invariant.
inline SceneSample make_sample(const RobotModel& robot, const CameraModel& cam,
                               const PosePerturber& perturber, const RandomizationConfig& rc,
                               int sample_id) {
  SceneSample s;
  s.sample_id = sample_id;
  Rng rng(derive_stream(rc.seed, static_cast<std::uint64_t>(sample_id)));
  s.q = robot.chain.sample_joint_config(rng);
  s.T_cb_true = perturber.draw(rng);
  s.draws.lights = static_cast<int>(rng.uniform_int(rc.lights_lo, rc.lights_hi));
  s.draws.distractors = static_cast<int>(rng.uniform_int(rc.distractors_lo, rc.distractors_hi));
  s.draws.image_noise = rng.uniform(rc.image_noise_lo, rc.image_noise_hi);
  s.draws.color_noise = rng.normal(0.0, rc.color_noise_sigma);
  s.nuisance = (norm01(s.draws.lights, rc.lights_lo, rc.lights_hi) +
                norm01(s.draws.distractors, rc.distractors_lo, rc.distractors_hi) +
                norm01(s.draws.image_noise, rc.image_noise_lo, rc.image_noise_hi)) /
               3.0;

  const std::vector<RigidTransform> fk = robot.chain.forward_kinematics(s.q);
  const Eigen::Vector3d camera_center = s.T_cb_true.inverse().b;
  s.truth.reserve(robot.candidates.keypoints.size());
  for (const Keypoint& kp : robot.candidates.keypoints) {
    GroundTruth g;
    g.keypoint_id = kp.id;
    const Eigen::Vector3d p_base = fk[static_cast<std::size_t>(kp.link)].apply(kp.offset);
    g.p_cam = s.T_cb_true.apply(p_base);
    g.pixel = project(cam, g.p_cam);
    g.visible = g.pixel.has_value() && visible_from(robot.chain, fk, camera_center, p_base);
    s.truth.push_back(std::move(g));
  }
  return s;
}

}  // namespace datagen_detail

// Domain-randomized scene generation: no rendering, just configurations with
// exact ground-truth projections, visibility, and a nuisance scalar standing
// in for the photometric randomizations.
inline Dataset generate_dataset(const RobotModel& robot, const CameraModel& cam,
                                const RigidTransform& cam_pose_init, const RandomizationConfig& rc,
                                int m_train, int m_test, int threads = 1) {
  rc.validate();
  cam.validate();
  robot.candidates.validate(robot.chain);
  if (m_train < 1 || m_test < 1)
    throw ConfigError("generate_dataset: need M_train >= 1 and M_test >= 1");

  const int m = m_train + m_test;
  Dataset ds;
  ds.chain_hash = robot.hash;
  ds.camera = cam;
  ds.rc = rc;
  for (const Keypoint& kp : robot.candidates.keypoints) ds.candidate_ids.push_back(kp.id);

  const PosePerturber perturber(cam_pose_init, rc.pose_sigma);
  ds.samples.resize(static_cast<std::size_t>(m));
  parallel_for(m, threads, [&](int i) {
    ds.samples[static_cast<std::size_t>(i)] =
        datagen_detail::make_sample(robot, cam, perturber, rc, i);
  });

  ds.train_ids.resize(static_cast<std::size_t>(m_train));
  std::iota(ds.train_ids.begin(), ds.train_ids.end(), 0);
  ds.test_ids.resize(static_cast<std::size_t>(m_test));
  std::iota(ds.test_ids.begin(), ds.test_ids.end(), m_train);

  // A candidate that never lands in front of the camera makes every loss
  // undefined; probe extra configurations (streams m, m+1, ...) before giving
  // up at 100*M total attempts.
  const std::size_t nc = robot.candidates.keypoints.size();
  std::vector<long> in_front(nc, 0);
  for (const SceneSample& s : ds.samples)
    for (std::size_t c = 0; c < nc; ++c)
      if (s.truth[c].pixel) ++in_front[c];
  const auto all_seen = [&] {
    for (long v : in_front)
      if (v == 0) return false;
    return true;
  };
  long attempts = m;
  const long max_attempts = 100L * m;
  while (!all_seen() && attempts < max_attempts) {
    const SceneSample probe = datagen_detail::make_sample(
        robot, cam, perturber, rc, static_cast<int>(attempts));
    for (std::size_t c = 0; c < nc; ++c)
      if (probe.truth[c].pixel) ++in_front[c];
    ++attempts;
  }
  for (std::size_t c = 0; c < nc; ++c)
    if (in_front[c] == 0)
      throw GenerationError("keypoint " + std::to_string(robot.candidates.keypoints[c].id) +
                            " never in front of the camera across " + std::to_string(attempts) +
                            " attempts");

  ds.validate();
  return ds;
}

}  // namespace kopt
