#pragma once

#include <filesystem>
#include <string>

#include "kopt/camera.hpp"
#include "kopt/dataset.hpp"
#include "kopt/detector.hpp"
#include "kopt/errors.hpp"
#include "kopt/io.hpp"
#include "kopt/kinematics.hpp"
#include "kopt/optimizer.hpp"
#include "kopt/tracker.hpp"

namespace kopt {

struct ScenarioConfig {
  std::string robot_path;  // resolved relative to the scenario file
  RobotModel robot;
  CameraModel camera;
  RigidTransform camera_pose;  // nominal camera-from-base
  RandomizationConfig rc;
  DifficultyProfile difficulty;
  OptimizationConfig opt;
  TrackerConfig tracker;
  int m_train = 2000;
  int m_test = 500;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  std::uint64_t scenario_hash = 0;
};

namespace scenario_detail {

inline Eigen::MatrixXd parse_cov6(const json& j, const std::string& what) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(6, 6);
  if (j.size() == 6) {  // diagonal shorthand
    for (int i = 0; i < 6; ++i) s(i, i) = j.at(i).get<double>();
  } else if (j.size() == 36) {
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 6; ++c) s(r, c) = j.at(6 * r + c).get<double>();
  } else {
    throw ConfigError(what + ": expected 6 (diagonal) or 36 (row-major) entries");
  }
  return s;
}

}  // namespace scenario_detail

inline ScenarioConfig load_scenario(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw ConfigError("scenario config not found: " + path);
  const std::string text = read_text_file(path);
  const json j = parse_json(text, "scenario config " + path);
  ScenarioConfig sc;
  sc.scenario_hash = fnv1a64(text);

  const std::filesystem::path dir = std::filesystem::path(path).parent_path();
  const std::string robot_rel = j.at("robot").get<std::string>();
  sc.robot_path = (dir / robot_rel).string();
  if (!std::filesystem::exists(sc.robot_path))
    throw ConfigError("robot config not found: " + sc.robot_path);
  sc.robot = load_robot(sc.robot_path);

  sc.seed = j.value("seed", std::uint64_t{0});
  sc.output_dir = j.value("output_dir", std::string("out"));

  const json& cam = j.at("camera");
  sc.camera = camera_from_json(cam);
  if (cam.contains("pose")) {
    sc.camera_pose = transform_from_json(cam.at("pose"));
    sc.camera_pose.q.normalize();
  }

  if (j.contains("randomization")) {
    const json& r = j.at("randomization");
    if (r.contains("pose_sigma")) {
      const auto& sig = r.at("pose_sigma");
      if (sig.size() == 7) {
        for (int i = 0; i < 7; ++i) sc.rc.pose_sigma(i, i) = sig.at(i).get<double>();
      } else if (sig.size() == 49) {
        for (int a = 0; a < 7; ++a)
          for (int b = 0; b < 7; ++b) sc.rc.pose_sigma(a, b) = sig.at(7 * a + b).get<double>();
      } else {
        throw ConfigError("randomization.pose_sigma: expected 7 (diagonal) or 49 entries");
      }
    }
    if (r.contains("lights")) {
      sc.rc.lights_lo = r.at("lights").at(0).get<int>();
      sc.rc.lights_hi = r.at("lights").at(1).get<int>();
    }
    if (r.contains("distractors")) {
      sc.rc.distractors_lo = r.at("distractors").at(0).get<int>();
      sc.rc.distractors_hi = r.at("distractors").at(1).get<int>();
    }
    if (r.contains("image_noise")) {
      sc.rc.image_noise_lo = r.at("image_noise").at(0).get<double>();
      sc.rc.image_noise_hi = r.at("image_noise").at(1).get<double>();
    }
    sc.rc.color_noise_sigma = r.value("color_noise_sigma", 0.0);
  }
  sc.rc.seed = sc.seed;
  sc.rc.validate();

  if (j.contains("difficulty"))
    sc.difficulty = difficulty_from_json(j.at("difficulty"));
  else
    sc.difficulty.fallback = KeypointDifficulty{};  // every candidate at default difficulty

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    sc.opt.K = o.value("K", sc.opt.K);
    sc.opt.T = o.value("T", sc.opt.T);
    sc.opt.gamma = o.value("gamma", sc.opt.gamma);
    sc.opt.lambda = o.value("lambda", sc.opt.lambda);
    sc.opt.weight_floor = o.value("weight_floor", sc.opt.weight_floor);
    sc.opt.miss_penalty = o.value("miss_penalty", sc.opt.miss_penalty);
    sc.opt.refine_iters = o.value("refine_iters", sc.opt.refine_iters);
    const std::string mode = o.value("constraint", std::string("global"));
    if (mode == "global")
      sc.opt.constraint = ConstraintMode::global;
    else if (mode == "per-group")
      sc.opt.constraint = ConstraintMode::per_group;
    else
      throw ConfigError("optimizer.constraint must be 'global' or 'per-group'");
  }
  sc.opt.seed = sc.seed;

  sc.tracker.camera = sc.camera;
  sc.tracker.T_cb_init = sc.camera_pose;
  if (j.contains("tracker")) {
    const json& t = j.at("tracker");
    sc.tracker.n_particles = t.value("particles", sc.tracker.n_particles);
    sc.tracker.alpha = t.value("alpha", sc.tracker.alpha);
    sc.tracker.resample_threshold = t.value("resample_threshold", sc.tracker.resample_threshold);
    if (t.contains("sigma_init"))
      sc.tracker.sigma_init = scenario_detail::parse_cov6(t.at("sigma_init"), "tracker.sigma_init");
    if (t.contains("sigma_wb"))
      sc.tracker.sigma_wb = scenario_detail::parse_cov6(t.at("sigma_wb"), "tracker.sigma_wb");
    if (t.contains("init_pose")) {
      sc.tracker.T_cb_init = transform_from_json(t.at("init_pose"));
      sc.tracker.T_cb_init.q.normalize();
    }
    const std::string mode = t.value("likelihood", std::string("sum"));
    if (mode == "sum")
      sc.tracker.likelihood = LikelihoodMode::sum;
    else if (mode == "product")
      sc.tracker.likelihood = LikelihoodMode::product;
    else
      throw ConfigError("tracker.likelihood must be 'sum' or 'product'");
  }

  if (j.contains("data")) {
    sc.m_train = j.at("data").value("m_train", sc.m_train);
    sc.m_test = j.at("data").value("m_test", sc.m_test);
  }
  return sc;
}

}  // namespace kopt
