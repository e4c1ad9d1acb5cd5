#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "kopt/datagen.hpp"
#include "kopt/errors.hpp"
#include "kopt/optimizer.hpp"

using kopt::CameraModel;
using kopt::ConfigError;
using kopt::ConstraintMode;
using kopt::Dataset;
using kopt::DifficultyProfile;
using kopt::EvaluationError;
using kopt::KeypointDifficulty;
using kopt::OptimizationConfig;
using kopt::RandomizationConfig;
using kopt::RigidTransform;
using kopt::RobotModel;
using kopt::WeightVector;

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

// Static rig: five well-spread points rigidly attached to the base, camera at
// the base origin. Ids 0 and 1 sit 5 px apart ((3,4) offset at fx=fy=600).
RobotModel static_rig() {
  const std::string text = R"({
    "name": "rig",
    "links": [{"name": "base"}],
    "keypoints": [
      {"id": 0, "link": 0, "offset": [0, 0, 1]},
      {"id": 1, "link": 0, "offset": [0.005, 0.006666666666666667, 1]},
      {"id": 2, "link": 0, "offset": [0.3, 0.2, 1.2]},
      {"id": 3, "link": 0, "offset": [-0.25, 0.15, 0.9]},
      {"id": 4, "link": 0, "offset": [0.1, -0.2, 1.1]}
    ]
  })";
  return kopt::parse_robot_config(kopt::parse_json(text));
}

Dataset rig_dataset(const RobotModel& robot, int m_train = 3, int m_test = 2) {
  RandomizationConfig rc;
  rc.seed = 77;
  return kopt::generate_dataset(robot, test_camera(), RigidTransform::identity(), rc, m_train,
                                m_test);
}

DifficultyProfile quiet_profile() {
  DifficultyProfile p;
  KeypointDifficulty kd;
  kd.sigma_base = 0.0;
  p.fallback = kd;
  return p;
}

WeightVector weights_of(const std::vector<int>& ids, const std::vector<double>& w) {
  WeightVector v;
  v.ids = ids;
  v.w = w;
  return v;
}

}  // namespace

TEST_CASE("single weighted draws follow the weights") {
  const WeightVector v = weights_of({0, 1, 2}, {2, 1, 1});
  kopt::Rng rng(5);
  int hits = 0;
  const int n = 30000;
  for (int i = 0; i < n; ++i) {
    const auto sel = kopt::sample_keypoints(v, 1, {}, rng);
    REQUIRE(sel.size() == 1);
    if (sel[0] == 0) ++hits;
  }
  CHECK(std::abs(static_cast<double>(hits) / n - 0.5) < 0.02);
}

TEST_CASE("sequential draws renormalize over the remainder") {
  const WeightVector v = weights_of({0, 1, 2}, {2, 1, 1});
  kopt::Rng rng(9);
  int both = 0;
  const int n = 30000;
  for (int i = 0; i < n; ++i) {
    const auto sel = kopt::sample_keypoints(v, 2, {}, rng);
    REQUIRE(sel.size() == 2);
    REQUIRE(sel[0] < sel[1]);  // canonical order
    if (sel[0] == 0 && sel[1] == 1) ++both;
  }
  // P({0,1}) = 0.5*(1/2) + 0.25*(2/3) = 5/12
  CHECK(std::abs(static_cast<double>(both) / n - 5.0 / 12.0) < 0.02);
}

TEST_CASE("grouped draws take the quota from every group") {
  const WeightVector v = weights_of({0, 1, 2, 3}, {3, 1, 1, 1});
  const std::map<int, std::vector<int>> groups{{0, {0, 1}}, {1, {2, 3}}};
  kopt::Rng rng(13);
  int zero = 0;
  const int n = 30000;
  for (int i = 0; i < n; ++i) {
    const auto sel = kopt::sample_keypoints(v, 2, groups, rng);
    REQUIRE(sel.size() == 2);
    CHECK(sel[0] <= 1);  // one from {0,1}
    CHECK(sel[1] >= 2);  // one from {2,3}
    if (sel[0] == 0) ++zero;
  }
  CHECK(std::abs(static_cast<double>(zero) / n - 0.75) < 0.02);
}

TEST_CASE("explicit quotas must sum to K and stay feasible") {
  const WeightVector v = weights_of({0, 1, 2, 3}, {1, 1, 1, 1});
  const std::map<int, std::vector<int>> groups{{0, {0, 1}}, {1, {2, 3}}};
  kopt::Rng rng(1);
  CHECK_THROWS_AS(kopt::sample_keypoints(v, 3, groups, rng), ConfigError);
  const std::map<int, int> too_big{{0, 3}, {1, 0}};
  CHECK_THROWS_AS(kopt::sample_keypoints(v, 3, groups, rng, too_big), ConfigError);
  const std::map<int, int> ok{{0, 2}, {1, 1}};
  const auto sel = kopt::sample_keypoints(v, 3, groups, rng, ok);
  CHECK(sel == std::vector<int>{0, 1, 2});
}

TEST_CASE("oversized requests and zero mass are handled") {
  const WeightVector v = weights_of({0, 1}, {1, 1});
  kopt::Rng rng(2);
  CHECK_THROWS_AS(kopt::sample_keypoints(v, 3, {}, rng), ConfigError);

  // All-zero mass falls back to uniform rather than dividing by zero.
  const WeightVector z = weights_of({0, 1, 2}, {0, 0, 0});
  int first = 0;
  for (int i = 0; i < 3000; ++i) {
    const auto sel = kopt::sample_keypoints(z, 2, {}, rng);
    REQUIRE(sel.size() == 2);
    if (sel[0] == 0) ++first;
  }
  CHECK(first > 1500);  // 0 appears in 2/3 of pairs
  CHECK(first < 2500);
}

TEST_CASE("weight updates reproduce the hand-computed softmax") {
  const WeightVector v = weights_of({1, 2, 3, 4}, {0.25, 0.25, 0.25, 0.25});
  const std::map<int, double> losses{{1, 0.0}, {2, std::log(3.0)}};
  const WeightVector out = kopt::update_weights(v, {1, 2}, losses, 1.0);
  CHECK(out.of(1) == Catch::Approx(0.375).epsilon(1e-12));
  CHECK(out.of(2) == Catch::Approx(0.125).epsilon(1e-12));
  CHECK(out.of(3) == 0.25);  // untouched, bit for bit
  CHECK(out.of(4) == 0.25);
  CHECK(out.total() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("equal losses equalize the selected mass") {
  const WeightVector v = weights_of({1, 2, 3}, {0.4, 0.1, 0.5});
  const std::map<int, double> losses{{1, 7.0}, {2, 7.0}};
  const WeightVector out = kopt::update_weights(v, {1, 2}, losses, 2.0);
  CHECK(out.of(1) == Catch::Approx(0.25).epsilon(1e-12));
  CHECK(out.of(2) == Catch::Approx(0.25).epsilon(1e-12));
  CHECK(out.of(3) == 0.5);
}

TEST_CASE("vanishing gamma flattens the reallocation") {
  const WeightVector v = weights_of({1, 2}, {0.9, 0.1});
  const std::map<int, double> losses{{1, 100.0}, {2, 0.0}};
  const WeightVector out = kopt::update_weights(v, {1, 2}, losses, 1e-15);
  CHECK(out.of(1) == Catch::Approx(0.5).epsilon(1e-9));
  CHECK(out.of(2) == Catch::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("weight mass is conserved under random updates") {
  kopt::Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> ids;
    std::vector<double> w;
    for (int i = 0; i < 10; ++i) {
      ids.push_back(i);
      w.push_back(rng.uniform(0.01, 1.0));
    }
    const WeightVector v = weights_of(ids, w);
    std::map<int, double> losses;
    std::vector<int> selected;
    for (int i = 0; i < 10; i += 2) {
      selected.push_back(i);
      losses[i] = rng.uniform(0.0, 50.0);
    }
    const double gamma = rng.uniform(0.1, 3.0);
    const WeightVector out = kopt::update_weights(v, selected, losses, gamma);
    CHECK(std::abs(out.total() - v.total()) < 1e-12);
    for (int i = 1; i < 10; i += 2) CHECK(out.of(i) == v.of(i));
    // Lower loss never ends up below a higher loss inside the selection.
    for (int a : selected)
      for (int b : selected)
        if (losses[a] < losses[b]) CHECK(out.of(a) >= out.of(b));
  }
}

TEST_CASE("infinite losses forfeit their share") {
  const double inf = std::numeric_limits<double>::infinity();
  const WeightVector v = weights_of({1, 2, 3}, {0.3, 0.3, 0.4});
  const std::map<int, double> losses{{1, 1.0}, {2, inf}};
  const WeightVector out = kopt::update_weights(v, {1, 2}, losses, 1.0);
  CHECK(out.of(1) == Catch::Approx(0.6).epsilon(1e-12));
  CHECK(out.of(2) == 0.0);

  const std::map<int, double> all_inf{{1, inf}, {2, inf}};
  const WeightVector out2 = kopt::update_weights(v, {1, 2}, all_inf, 1.0);
  CHECK(out2.of(1) == Catch::Approx(0.3).epsilon(1e-12));
  CHECK(out2.of(2) == Catch::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("the weight floor rescues starved keypoints without creating mass") {
  const WeightVector v = weights_of({1, 2}, {0.5, 0.5});
  const std::map<int, double> losses{{1, 0.0}, {2, 40.0}};
  const WeightVector out = kopt::update_weights(v, {1, 2}, losses, 1.0, 1e-6);
  CHECK(out.of(2) == Catch::Approx(1e-6).epsilon(1e-9));
  CHECK(out.total() == Catch::Approx(1.0).margin(1e-12));

  // When the whole selected mass is below floor*k, split it evenly.
  const WeightVector tiny = weights_of({1, 2}, {1e-9, 1e-9});
  const WeightVector out2 = kopt::update_weights(tiny, {1, 2}, losses, 1.0, 1e-6);
  CHECK(out2.of(1) == Catch::Approx(1e-9).epsilon(1e-12));
  CHECK(out2.of(2) == Catch::Approx(1e-9).epsilon(1e-12));
}

TEST_CASE("weight updates validate their inputs") {
  const WeightVector v = weights_of({1, 2}, {0.5, 0.5});
  CHECK_THROWS_AS(kopt::update_weights(v, {}, {}, 1.0), ConfigError);
  const std::map<int, double> partial{{1, 0.0}};
  CHECK_THROWS_AS(kopt::update_weights(v, {1, 2}, partial, 1.0), ConfigError);
}

TEST_CASE("a noiseless detector evaluates to zero loss") {
  const RobotModel robot = static_rig();
  const Dataset ds = rig_dataset(robot);
  const std::vector<int> sel{0, 1, 2, 3, 4};
  const auto model = kopt::fit_detector(quiet_profile(), sel, ds);
  OptimizationConfig cfg;
  cfg.K = 5;
  cfg.lambda = 50.0;
  cfg.refine_iters = 10;
  const auto outcome = kopt::evaluate_performance(robot, sel, model, ds, cfg, 99);
  CHECK(outcome.pnp_success == 2);
  CHECK(outcome.pnp_skipped == 0);
  for (const auto& loss : outcome.losses) {
    CHECK(loss.l2d == 0.0);
    CHECK(loss.l3d < 1e-6);
    CHECK(loss.n_detected == 2);
    CHECK(loss.n_missed == 0);
  }
  CHECK(outcome.error < 1e-4);
}

TEST_CASE("a certain identity swap costs exactly its pixel offset") {
  const RobotModel robot = static_rig();
  const Dataset ds = rig_dataset(robot);
  DifficultyProfile p = quiet_profile();
  KeypointDifficulty swapper;
  swapper.sigma_base = 0.0;
  swapper.p_sym_base = 1.0;
  swapper.confuser = 1;  // 5 px away by construction
  p.per_keypoint[0] = swapper;

  const std::vector<int> sel{0, 1, 2, 3, 4};
  const auto model = kopt::fit_detector(p, sel, ds);
  OptimizationConfig cfg;
  cfg.K = 5;
  cfg.lambda = 0.0;
  const auto outcome = kopt::evaluate_performance(robot, sel, model, ds, cfg, 7);
  CHECK(outcome.losses[0].l2d == Catch::Approx(5.0).margin(1e-9));
  for (int i = 1; i < 5; ++i) CHECK(outcome.losses[static_cast<std::size_t>(i)].l2d == 0.0);
  CHECK(outcome.error == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("a certain miss costs the miss penalty") {
  const RobotModel robot = static_rig();
  const Dataset ds = rig_dataset(robot);
  DifficultyProfile p = quiet_profile();
  KeypointDifficulty ghost;
  ghost.sigma_base = 0.0;
  ghost.miss_base = 1.0;
  p.per_keypoint[4] = ghost;

  const std::vector<int> sel{0, 1, 2, 3, 4};
  const auto model = kopt::fit_detector(p, sel, ds);
  OptimizationConfig cfg;
  cfg.K = 5;
  cfg.lambda = 0.0;
  cfg.miss_penalty = 7.0;
  const auto outcome = kopt::evaluate_performance(robot, sel, model, ds, cfg, 7);
  CHECK(outcome.losses[4].l2d == Catch::Approx(7.0));
  CHECK(outcome.losses[4].n_missed == 2);
  CHECK(outcome.losses[4].n_detected == 0);

  // Without the penalty the same keypoint produces no pixels at all, so its
  // image loss is undefined and its total goes infinite.
  cfg.miss_penalty = 0.0;
  const auto bare = kopt::evaluate_performance(robot, sel, model, ds, cfg, 7);
  CHECK(std::isinf(bare.losses[4].l2d));
  CHECK(std::isinf(bare.losses[4].total));
}

TEST_CASE("too few detections skip the pose solve, and losing every sample fails") {
  const RobotModel robot = static_rig();
  const Dataset ds = rig_dataset(robot);
  const std::vector<int> sel{0, 2, 3};  // K = 3 < 4: no solve possible
  const auto model = kopt::fit_detector(quiet_profile(), sel, ds);
  OptimizationConfig cfg;
  cfg.K = 3;
  CHECK_THROWS_AS(kopt::evaluate_performance(robot, sel, model, ds, cfg, 1), EvaluationError);
}

TEST_CASE("evaluation is invariant to the thread count") {
  const RobotModel robot = static_rig();
  const Dataset ds = rig_dataset(robot, 3, 6);
  DifficultyProfile p;
  KeypointDifficulty kd;
  kd.sigma_base = 1.0;
  p.fallback = kd;
  p.coeffs.a_nuis = 1.0;
  const std::vector<int> sel{0, 1, 2, 3, 4};
  const auto model = kopt::fit_detector(p, sel, ds);
  OptimizationConfig cfg;
  cfg.K = 5;
  cfg.threads = 1;
  const auto serial = kopt::evaluate_performance(robot, sel, model, ds, cfg, 321);
  cfg.threads = 4;
  const auto parallel = kopt::evaluate_performance(robot, sel, model, ds, cfg, 321);
  CHECK(serial.error == parallel.error);
  for (std::size_t i = 0; i < serial.losses.size(); ++i) {
    CHECK(serial.losses[i].l2d == parallel.losses[i].l2d);
    CHECK(serial.losses[i].l3d == parallel.losses[i].l3d);
  }
}

TEST_CASE("full optimization runs deterministically and tracks its best set") {
  const RobotModel robot = static_rig();
  const Dataset ds = rig_dataset(robot, 4, 3);
  DifficultyProfile p;
  KeypointDifficulty kd;
  kd.sigma_base = 1.0;
  p.fallback = kd;
  OptimizationConfig cfg;
  cfg.K = 4;
  cfg.T = 5;
  cfg.seed = 11;
  cfg.refine_iters = 3;

  const auto a = kopt::optimize(robot, p, ds, cfg);
  const auto b = kopt::optimize(robot, p, ds, cfg);
  CHECK(kopt::result_to_json(a).dump() == kopt::result_to_json(b).dump());

  REQUIRE(a.history.size() == 5);
  double best = std::numeric_limits<double>::infinity();
  int best_t = -1;
  for (const auto& rec : a.history) {
    REQUIRE(rec.selected.size() == 4);
    CHECK(std::is_sorted(rec.selected.begin(), rec.selected.end()));
    CHECK_FALSE(rec.eval_failed);
    double sum = 0.0;
    for (double w : rec.weights_after) sum += w;
    CHECK(std::abs(sum - 1.0) < 1e-12);
    if (rec.error < best) {
      best = rec.error;
      best_t = rec.t;
    }
  }
  CHECK(a.best_error == best);
  CHECK(a.best_iteration == best_t);
  CHECK(a.best_set == a.history[static_cast<std::size_t>(best_t - 1)].selected);

  cfg.threads = 4;
  const auto c = kopt::optimize(robot, p, ds, cfg);
  CHECK(kopt::result_to_json(a).dump() == kopt::result_to_json(c).dump());
}

TEST_CASE("selecting every candidate is allowed") {
  const RobotModel robot = static_rig();
  const Dataset ds = rig_dataset(robot);
  OptimizationConfig cfg;
  cfg.K = 5;
  cfg.T = 2;
  cfg.seed = 3;
  const auto r = kopt::optimize(robot, quiet_profile(), ds, cfg);
  CHECK(r.best_set == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("optimization validates config and dataset pairing") {
  const RobotModel robot = static_rig();
  Dataset ds = rig_dataset(robot);
  OptimizationConfig cfg;
  cfg.K = 0;
  CHECK_THROWS_AS(kopt::optimize(robot, quiet_profile(), ds, cfg), ConfigError);
  cfg.K = 2;
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(kopt::optimize(robot, quiet_profile(), ds, cfg), ConfigError);
  cfg.gamma = 1.0;
  ds.chain_hash ^= 1;
  CHECK_THROWS_AS(kopt::optimize(robot, quiet_profile(), ds, cfg), ConfigError);

  // Per-group mode needs grouped candidates.
  Dataset good = rig_dataset(robot);
  cfg.constraint = ConstraintMode::per_group;
  CHECK_THROWS_AS(kopt::optimize(robot, quiet_profile(), good, cfg), ConfigError);
}

TEST_CASE("an evaluation failure is recorded and skipped, not fatal") {
  const RobotModel robot = static_rig();
  const Dataset ds = rig_dataset(robot);
  OptimizationConfig cfg;
  cfg.K = 3;  // always < 4 detections: every iteration fails evaluation
  cfg.T = 3;
  cfg.seed = 19;
  const auto r = kopt::optimize(robot, quiet_profile(), ds, cfg);
  REQUIRE(r.history.size() == 3);
  for (const auto& rec : r.history) {
    CHECK(rec.eval_failed);
    CHECK_FALSE(rec.note.empty());
    // Weights stay uniform when nothing can be scored.
    for (double w : rec.weights_after) CHECK(w == Catch::Approx(0.2));
  }
  CHECK(r.best_iteration == -1);
  CHECK(r.best_set.empty());
}
