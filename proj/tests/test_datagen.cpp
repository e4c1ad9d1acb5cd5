#include <catch_amalgamated.hpp>

#include <cmath>
#include <string>

#include "kopt/datagen.hpp"
#include "kopt/errors.hpp"

using kopt::CameraModel;
using kopt::Dataset;
using kopt::GenerationError;
using kopt::RandomizationConfig;
using kopt::RigidTransform;
using kopt::RobotModel;
using kopt::SceneSample;

namespace {

CameraModel test_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 600;
  cam.cx = 320;
  cam.cy = 240;
  cam.width = 640;
  cam.height = 480;
  return cam;
}

// Camera 2 m out on +x, looking back at the robot base along -x:
// camera z = base -x, camera x = base +y, camera y = base -z.
RigidTransform lookback_camera_pose() {
  Eigen::Matrix3d r_bc;  // base-from-camera
  r_bc.col(0) = Eigen::Vector3d(0, 1, 0);
  r_bc.col(1) = Eigen::Vector3d(0, 0, -1);
  r_bc.col(2) = Eigen::Vector3d(-1, 0, 0);
  RigidTransform t_bc{Eigen::Quaterniond(r_bc), Eigen::Vector3d(2, 0, 0)};
  return t_bc.inverse();  // camera-from-base
}

RobotModel small_robot() {
  const std::string text = R"({
    "name": "mini",
    "links": [
      {"name": "base", "capsules": [{"a": [0, 0, -0.2], "b": [0, 0, 0.2], "radius": 0.05}]},
      {"name": "arm", "parent": 0,
       "joint": {"type": "revolute", "axis": [0, 0, 1], "limits": [-1.5, 1.5]},
       "capsules": [{"a": [0, 0, 0], "b": [0.4, 0, 0], "radius": 0.03}]},
      {"name": "tip", "parent": 1, "transform": {"translation": [0.4, 0, 0]}}
    ],
    "keypoints": [
      {"id": 0, "link": 1, "offset": [0.2, 0, 0]},
      {"id": 1, "link": 2, "offset": [0, 0, 0]},
      {"id": 2, "link": 0, "offset": [0, 0, 0.2]}
    ],
    "ee": {"link": 2}
  })";
  return kopt::parse_robot_config(kopt::parse_json(text));
}

RandomizationConfig base_rc(std::uint64_t seed) {
  RandomizationConfig rc;
  rc.pose_sigma = Eigen::MatrixXd::Zero(7, 7);
  rc.pose_sigma.diagonal() << 0, 1e-6, 1e-6, 1e-6, 1e-4, 1e-4, 1e-4;
  rc.seed = seed;
  rc.color_noise_sigma = 0.1;
  return rc;
}

}  // namespace

TEST_CASE("generation is deterministic for a fixed seed") {
  const RobotModel robot = small_robot();
  const Dataset a = kopt::generate_dataset(robot, test_camera(), lookback_camera_pose(),
                                           base_rc(42), 8, 4);
  const Dataset b = kopt::generate_dataset(robot, test_camera(), lookback_camera_pose(),
                                           base_rc(42), 8, 4);
  CHECK(kopt::serialize_dataset(a) == kopt::serialize_dataset(b));

  const Dataset c = kopt::generate_dataset(robot, test_camera(), lookback_camera_pose(),
                                           base_rc(43), 8, 4);
  CHECK(kopt::serialize_dataset(a) != kopt::serialize_dataset(c));
}

TEST_CASE("thread count never changes the generated bytes") {
  const RobotModel robot = small_robot();
  const Dataset serial = kopt::generate_dataset(robot, test_camera(), lookback_camera_pose(),
                                                base_rc(7), 12, 6, 1);
  const Dataset parallel = kopt::generate_dataset(robot, test_camera(), lookback_camera_pose(),
                                                  base_rc(7), 12, 6, 4);
  CHECK(kopt::serialize_dataset(serial) == kopt::serialize_dataset(parallel));
}

TEST_CASE("zero pose noise and pinned joints leave only nuisance variation") {
  RobotModel robot = small_robot();
  // Pin the single joint at 0 by collapsing its limits.
  const std::string pinned = R"({
    "links": [
      {"name": "base"},
      {"name": "arm", "parent": 0,
       "joint": {"type": "revolute", "axis": [0, 0, 1], "limits": [0, 0]}},
      {"name": "tip", "parent": 1, "transform": {"translation": [0.4, 0, 0]}}
    ],
    "keypoints": [{"id": 0, "link": 2, "offset": [0, 0, 0]}]
  })";
  robot = kopt::parse_robot_config(kopt::parse_json(pinned));
  RandomizationConfig rc = base_rc(5);
  rc.pose_sigma.setZero();
  const RigidTransform pose = lookback_camera_pose();
  const Dataset ds = kopt::generate_dataset(robot, test_camera(), pose, rc, 6, 3);

  const SceneSample& first = ds.samples[0];
  for (const SceneSample& s : ds.samples) {
    CHECK(s.q[0] == 0.0);
    CHECK((s.T_cb_true.q.coeffs() - pose.q.coeffs()).norm() == 0.0);
    CHECK((s.T_cb_true.b - pose.b).norm() == 0.0);
    REQUIRE(s.truth.size() == 1);
    REQUIRE(s.truth[0].pixel.has_value());
    CHECK((*s.truth[0].pixel - *first.truth[0].pixel).norm() == 0.0);
    CHECK(s.nuisance >= 0.0);
    CHECK(s.nuisance <= 1.0);
  }
}

TEST_CASE("stored truth agrees with recomputed projections") {
  const RobotModel robot = small_robot();
  const Dataset ds = kopt::generate_dataset(robot, test_camera(), lookback_camera_pose(),
                                            base_rc(19), 10, 5);
  for (const SceneSample& s : ds.samples) {
    const auto fk = robot.chain.forward_kinematics(s.q);
    for (std::size_t c = 0; c < robot.candidates.keypoints.size(); ++c) {
      const kopt::Keypoint& kp = robot.candidates.keypoints[c];
      const Eigen::Vector3d p_base = fk[static_cast<std::size_t>(kp.link)].apply(kp.offset);
      const Eigen::Vector3d p_cam = s.T_cb_true.apply(p_base);
      CHECK((s.truth[c].p_cam - p_cam).norm() < 1e-12);
      const auto px = kopt::project(ds.camera, p_cam);
      REQUIRE(px.has_value() == s.truth[c].pixel.has_value());
      if (px) CHECK((*s.truth[c].pixel - *px).norm() < 1e-12);
      if (s.truth[c].visible) {
        REQUIRE(s.truth[c].pixel.has_value());
        CHECK(kopt::visible_from(robot.chain, fk, s.T_cb_true.inverse().b, p_base));
      }
    }
  }
}

TEST_CASE("nuisance draws stay inside their configured ranges") {
  const RobotModel robot = small_robot();
  RandomizationConfig rc = base_rc(23);
  rc.lights_lo = 1;
  rc.lights_hi = 3;
  rc.distractors_lo = 2;
  rc.distractors_hi = 5;
  rc.image_noise_lo = 0.25;
  rc.image_noise_hi = 0.75;
  const Dataset ds = kopt::generate_dataset(robot, test_camera(), lookback_camera_pose(), rc, 30, 10);
  for (const SceneSample& s : ds.samples) {
    CHECK(s.draws.lights >= 1);
    CHECK(s.draws.lights <= 3);
    CHECK(s.draws.distractors >= 2);
    CHECK(s.draws.distractors <= 5);
    CHECK(s.draws.image_noise >= 0.25);
    CHECK(s.draws.image_noise <= 0.75);
    CHECK(s.nuisance >= 0.0);
    CHECK(s.nuisance <= 1.0);
  }
}

TEST_CASE("splits are contiguous and cover every sample") {
  const RobotModel robot = small_robot();
  const Dataset ds = kopt::generate_dataset(robot, test_camera(), lookback_camera_pose(),
                                            base_rc(3), 7, 3);
  REQUIRE(ds.samples.size() == 10);
  REQUIRE(ds.train_ids.size() == 7);
  REQUIRE(ds.test_ids.size() == 3);
  for (int i = 0; i < 7; ++i) CHECK(ds.train_ids[static_cast<std::size_t>(i)] == i);
  for (int i = 0; i < 3; ++i) CHECK(ds.test_ids[static_cast<std::size_t>(i)] == 7 + i);
  CHECK_NOTHROW(ds.validate());
  CHECK(ds.chain_hash == robot.hash);
}

TEST_CASE("a keypoint that can never face the camera aborts generation") {
  // Keypoint fixed 10 m behind the camera (camera looks at -x from x=+2).
  const std::string text = R"({
    "links": [{"name": "base"}],
    "keypoints": [{"id": 0, "link": 0, "offset": [12, 0, 0]}]
  })";
  const RobotModel robot = kopt::parse_robot_config(kopt::parse_json(text));
  RandomizationConfig rc = base_rc(1);
  rc.pose_sigma.setZero();
  CHECK_THROWS_WITH(
      kopt::generate_dataset(robot, test_camera(), lookback_camera_pose(), rc, 4, 2),
      Catch::Matchers::ContainsSubstring("keypoint 0"));
}

TEST_CASE("generation validates its inputs") {
  const RobotModel robot = small_robot();
  CHECK_THROWS_AS(kopt::generate_dataset(robot, test_camera(), lookback_camera_pose(),
                                         base_rc(1), 0, 2),
                  kopt::ConfigError);
  RandomizationConfig bad = base_rc(1);
  bad.lights_lo = 9;
  CHECK_THROWS_AS(kopt::generate_dataset(robot, test_camera(), lookback_camera_pose(), bad, 2, 2),
                  kopt::ConfigError);
}
