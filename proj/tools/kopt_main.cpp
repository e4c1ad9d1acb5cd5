// Command-line front end: gen-data | optimize | evaluate | calibrate | track.
// stdout carries exactly one summary line per run; diagnostics go to stderr.

#include <cinttypes>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kopt/datagen.hpp"
#include "kopt/dataset.hpp"
#include "kopt/detector.hpp"
#include "kopt/errors.hpp"
#include "kopt/io.hpp"
#include "kopt/kinematics.hpp"
#include "kopt/metrics.hpp"
#include "kopt/optimizer.hpp"
#include "kopt/pnp.hpp"
#include "kopt/rng.hpp"
#include "kopt/scenario.hpp"
#include "kopt/tracker.hpp"

namespace {

constexpr const char* kToolVersion = "kopt 1.0.0";

struct CommonOpts {
  std::string scenario_path;
  std::string dataset_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
};

// Shortest round-trip decimal, shared with the JSON writer, so CSV and JSON
// agree bit-for-bit across reruns.
std::string num(double v) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
  return kopt::json(v).dump();
}

std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s.push_back(',');
    s += std::to_string(ids[i]);
  }
  return s;
}

std::vector<int> parse_id_list(const std::string& text) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const std::string tok = text.substr(start, end - start);
    if (!tok.empty()) {
      try {
        out.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw kopt::ConfigError("bad keypoint id '" + tok + "' in --set");
      }
    }
    start = end + 1;
  }
  return out;
}

void write_manifest(const std::string& out_dir, const std::string& command, std::uint64_t seed,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    const std::vector<std::string>& outputs) {
  kopt::json in = kopt::json::object();
  for (const auto& [name, path] : inputs)
    in[name] = kopt::json{{"path", path}, {"fnv1a64", kopt::hex64(kopt::hash_file(path))}};
  const kopt::json m{{"command", command},
                     {"tool_version", kToolVersion},
                     {"seed", seed},
                     {"inputs", in},
                     {"outputs", outputs}};
  kopt::write_text_file(out_dir + "/" + command + "_manifest.json", m.dump(2) + "\n");
}

kopt::ScenarioConfig load_scenario_with_overrides(CommonOpts& opts) {
  if (opts.scenario_path.empty()) throw kopt::ConfigError("--scenario is required");
  kopt::ScenarioConfig sc = kopt::load_scenario(opts.scenario_path);
  if (opts.seed_set) {
    sc.seed = opts.seed;
    sc.rc.seed = opts.seed;
    sc.opt.seed = opts.seed;
  }
  if (opts.out_dir.empty()) opts.out_dir = sc.output_dir;
  sc.opt.threads = opts.threads;
  sc.tracker.threads = opts.threads;
  return sc;
}

kopt::Dataset load_dataset_checked(const CommonOpts& opts, const kopt::RobotModel& robot) {
  if (opts.dataset_path.empty()) throw kopt::ConfigError("--dataset is required");
  if (!std::filesystem::exists(opts.dataset_path))
    throw kopt::ConfigError("dataset not found: " + opts.dataset_path);
  kopt::Dataset ds = kopt::load_dataset(opts.dataset_path);
  if (ds.chain_hash != robot.hash)
    throw kopt::ConfigError("dataset " + opts.dataset_path +
                            " was generated for a different robot config");
  return ds;
}

std::vector<int> resolve_set(const std::string& set_flag, const kopt::RobotModel& robot) {
  std::vector<int> ids = set_flag.empty() ? std::vector<int>{} : parse_id_list(set_flag);
  if (ids.empty())
    for (const kopt::Keypoint& kp : robot.candidates.keypoints) ids.push_back(kp.id);
  for (int id : ids)
    if (!robot.candidates.find(id))
      throw kopt::ConfigError("keypoint " + std::to_string(id) + " is not a candidate");
  return ids;
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(CommonOpts opts, int m_train_flag, int m_test_flag) {
  kopt::ScenarioConfig sc = load_scenario_with_overrides(opts);
  const int m_train = m_train_flag > 0 ? m_train_flag : sc.m_train;
  const int m_test = m_test_flag > 0 ? m_test_flag : sc.m_test;

  const kopt::Dataset ds = kopt::generate_dataset(sc.robot, sc.camera, sc.camera_pose, sc.rc,
                                                  m_train, m_test, opts.threads);
  const std::string path = opts.out_dir + "/dataset.jsonl";
  kopt::save_dataset(ds, path);

  std::fprintf(stderr, "per-candidate visibility over %zu samples:\n", ds.samples.size());
  for (std::size_t c = 0; c < ds.candidate_ids.size(); ++c) {
    long vis = 0;
    for (const kopt::SceneSample& s : ds.samples) vis += s.truth[c].visible ? 1 : 0;
    std::fprintf(stderr, "  keypoint %d: %.3f\n", ds.candidate_ids[c],
                 static_cast<double>(vis) / static_cast<double>(ds.samples.size()));
  }

  write_manifest(opts.out_dir, "gen-data", sc.seed,
                 {{"scenario", opts.scenario_path}, {"robot", sc.robot_path}}, {path});
  std::printf("gen-data ok samples=%zu train=%d test=%d out=%s\n", ds.samples.size(), m_train,
              m_test, path.c_str());
  return kopt::kExitOk;
}

// ---------------------------------------------------------------- optimize

int cmd_optimize(CommonOpts opts, int k_flag, int t_flag, double gamma_flag, double lambda_flag,
                 const std::string& constraint_flag) {
  kopt::ScenarioConfig sc = load_scenario_with_overrides(opts);
  if (k_flag > 0) sc.opt.K = k_flag;
  if (t_flag > 0) sc.opt.T = t_flag;
  if (gamma_flag > 0) sc.opt.gamma = gamma_flag;
  if (lambda_flag >= 0) sc.opt.lambda = lambda_flag;
  if (!constraint_flag.empty()) {
    if (constraint_flag == "global")
      sc.opt.constraint = kopt::ConstraintMode::global;
    else if (constraint_flag == "per-group")
      sc.opt.constraint = kopt::ConstraintMode::per_group;
    else
      throw kopt::ConfigError("--constraint must be 'global' or 'per-group'");
  }
  const kopt::Dataset ds = load_dataset_checked(opts, sc.robot);

  const kopt::OptimizationResult result = kopt::optimize(sc.robot, sc.difficulty, ds, sc.opt);

  const std::string result_path = opts.out_dir + "/result.json";
  kopt::write_text_file(result_path, kopt::result_to_json(result).dump(2) + "\n");
  std::string csv = "iteration,mean_error\n";
  for (const kopt::IterationRecord& rec : result.history)
    csv += std::to_string(rec.t) + "," + num(rec.error) + "\n";
  const std::string csv_path = opts.out_dir + "/convergence.csv";
  kopt::write_text_file(csv_path, csv);

  write_manifest(opts.out_dir, "optimize", sc.seed,
                 {{"scenario", opts.scenario_path},
                  {"robot", sc.robot_path},
                  {"dataset", opts.dataset_path}},
                 {result_path, csv_path});
  std::printf("optimize ok best_iteration=%d best_error=%s best_set=%s out=%s\n",
              result.best_iteration, num(result.best_error).c_str(),
              join_ids(result.best_set).c_str(), result_path.c_str());
  return kopt::kExitOk;
}

// ---------------------------------------------------------------- evaluate

int cmd_evaluate(CommonOpts opts, const std::string& set_flag) {
  kopt::ScenarioConfig sc = load_scenario_with_overrides(opts);
  const kopt::Dataset ds = load_dataset_checked(opts, sc.robot);
  const std::vector<int> ids = resolve_set(set_flag, sc.robot);

  const kopt::DetectorModel model = kopt::fit_detector(sc.difficulty, ids, ds);
  const std::uint64_t eval_seed = kopt::derive_stream(sc.seed, 3);
  const kopt::EvaluationOutcome outcome =
      kopt::evaluate_performance(sc.robot, ids, model, ds, sc.opt, eval_seed);

  // Second pass with the same per-sample streams: raw errors for PCK curves
  // and per-frame end-effector metrics.
  std::vector<double> errs2d, errs3d_mm;
  kopt::json frames = kopt::json::array();
  std::string frames_csv = "sample_id,pnp_ok,ee_error_m,ee_reproj_px\n";
  const kopt::EndEffector& ee = sc.robot.ee;
  for (int sid : ds.test_ids) {
    const kopt::SceneSample& s = ds.sample(sid);
    kopt::Rng rng(kopt::derive_stream(eval_seed, static_cast<std::uint64_t>(s.sample_id)));
    const std::vector<kopt::Detection> dets = kopt::detect(model, s, rng);
    const std::vector<kopt::RigidTransform> fk = sc.robot.chain.forward_kinematics(s.q);

    std::vector<kopt::Correspondence> corrs;
    std::vector<Eigen::Vector3d> base_pts(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const kopt::Keypoint* kp = sc.robot.candidates.find(ids[i]);
      base_pts[i] = fk[static_cast<std::size_t>(kp->link)].apply(kp->offset);
      const kopt::Detection& det = dets[i];
      const kopt::GroundTruth* truth = kopt::find_truth(s, ids[i]);
      if (det.status == kopt::DetectionStatus::detected && truth && truth->pixel) {
        errs2d.push_back((det.pixel - *truth->pixel).norm());
        corrs.push_back({det.pixel, base_pts[i], 1.0});
      }
    }

    bool pnp_ok = false;
    kopt::json ee_err = nullptr, ee_reproj = nullptr;
    std::string ee_err_csv = "", ee_reproj_csv = "";
    if (corrs.size() >= 4) {
      try {
        kopt::PoseEstimate est = kopt::epnp(corrs, ds.camera);
        if (sc.opt.refine_iters > 0)
          est = kopt::refine_pose(est, corrs, ds.camera, sc.opt.refine_iters);
        pnp_ok = true;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const kopt::GroundTruth* truth = kopt::find_truth(s, ids[i]);
          errs3d_mm.push_back(1000.0 * (est.T.apply(base_pts[i]) - truth->p_cam).norm());
        }
        const Eigen::Vector3d ee_base =
            fk[static_cast<std::size_t>(ee.link)].apply(ee.offset);
        const double e3 = kopt::ee_3d_error(est.T, ee_base, s.T_cb_true.apply(ee_base));
        ee_err = e3;
        ee_err_csv = num(e3);
        const auto true_px = kopt::project_point(ds.camera, s.T_cb_true, ee_base);
        if (true_px) {
          try {
            const double re = kopt::reprojection_error_ee(est.T, ee_base, *true_px, ds.camera);
            ee_reproj = re;
            ee_reproj_csv = num(re);
          } catch (const kopt::PnpError&) {
          }
        }
      } catch (const kopt::PnpError&) {
      }
    }
    frames.push_back(kopt::json{{"sample_id", s.sample_id},
                                {"pnp_ok", pnp_ok},
                                {"ee_error_m", ee_err},
                                {"ee_reproj_px", ee_reproj}});
    frames_csv += std::to_string(s.sample_id) + "," + (pnp_ok ? "1" : "0") + "," + ee_err_csv +
                  "," + ee_reproj_csv + "\n";
  }

  const kopt::PckCurve pck2d = kopt::pck(errs2d, kopt::default_pck_grid_2d());
  const kopt::PckCurve pck3d = kopt::pck(errs3d_mm, kopt::default_pck_grid_3d_mm());

  kopt::json losses = kopt::json::array();
  for (const kopt::KeypointLoss& loss : outcome.losses)
    losses.push_back(kopt::json{{"id", loss.keypoint_id},
                                {"l2d", kopt::finite_or_null(loss.l2d)},
                                {"l3d", kopt::finite_or_null(loss.l3d)},
                                {"total", kopt::finite_or_null(loss.total)},
                                {"n_detected", loss.n_detected},
                                {"n_missed", loss.n_missed}});
  const kopt::json report{{"set", ids},
                          {"lambda", sc.opt.lambda},
                          {"mean_error", kopt::finite_or_null(outcome.error)},
                          {"pnp_success", outcome.pnp_success},
                          {"pnp_skipped", outcome.pnp_skipped},
                          {"losses", losses},
                          {"pck2d", kopt::pck_to_json(pck2d)},
                          {"pck3d_mm", kopt::pck_to_json(pck3d)},
                          {"frames", frames}};
  const std::string report_path = opts.out_dir + "/evaluate_report.json";
  kopt::write_text_file(report_path, report.dump(2) + "\n");

  std::string pck2d_csv = "threshold_px,value\n";
  for (std::size_t i = 0; i < pck2d.thresholds.size(); ++i)
    pck2d_csv += num(pck2d.thresholds[i]) + "," + num(pck2d.values[i]) + "\n";
  std::string pck3d_csv = "threshold_mm,value\n";
  for (std::size_t i = 0; i < pck3d.thresholds.size(); ++i)
    pck3d_csv += num(pck3d.thresholds[i]) + "," + num(pck3d.values[i]) + "\n";
  const std::string pck2d_path = opts.out_dir + "/pck2d.csv";
  const std::string pck3d_path = opts.out_dir + "/pck3d.csv";
  const std::string frames_path = opts.out_dir + "/frames.csv";
  kopt::write_text_file(pck2d_path, pck2d_csv);
  kopt::write_text_file(pck3d_path, pck3d_csv);
  kopt::write_text_file(frames_path, frames_csv);

  write_manifest(opts.out_dir, "evaluate", sc.seed,
                 {{"scenario", opts.scenario_path},
                  {"robot", sc.robot_path},
                  {"dataset", opts.dataset_path}},
                 {report_path, pck2d_path, pck3d_path, frames_path});
  std::printf("evaluate ok set=%s mean_error=%s auc2d=%s auc3d=%s out=%s\n",
              join_ids(ids).c_str(), num(outcome.error).c_str(), num(pck2d.auc).c_str(),
              num(pck3d.auc).c_str(), report_path.c_str());
  return kopt::kExitOk;
}

// ---------------------------------------------------------------- calibrate

int cmd_calibrate(CommonOpts opts, const std::string& corr_path, int refine_iters) {
  kopt::ScenarioConfig sc = load_scenario_with_overrides(opts);
  if (corr_path.empty()) throw kopt::ConfigError("--correspondences is required");
  if (!std::filesystem::exists(corr_path))
    throw kopt::ConfigError("correspondences file not found: " + corr_path);

  const std::string text = kopt::read_text_file(corr_path);
  std::vector<kopt::Correspondence> corrs;
  std::size_t start = 0;
  int lineno = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (line.empty()) continue;
    const kopt::json j = kopt::parse_json(line, "correspondences line " + std::to_string(lineno));
    for (const char* key : {"u", "v", "x", "y", "z"})
      if (!j.contains(key))
        throw kopt::SchemaError("correspondences line " + std::to_string(lineno) +
                                ": missing field '" + key + "'");
    kopt::Correspondence c;
    c.image_point = {j.at("u").get<double>(), j.at("v").get<double>()};
    c.base_point = {j.at("x").get<double>(), j.at("y").get<double>(), j.at("z").get<double>()};
    c.weight = j.value("weight", 1.0);
    corrs.push_back(c);
  }

  kopt::PoseEstimate est = kopt::epnp(corrs, sc.camera);
  if (refine_iters > 0) est = kopt::refine_pose(est, corrs, sc.camera, refine_iters);

  const kopt::json out{{"pose", kopt::transform_to_json(est.T)},
                       {"reprojection_rmse", est.reprojection_rmse},
                       {"n", corrs.size()}};
  const std::string path = opts.out_dir + "/calibration.json";
  kopt::write_text_file(path, out.dump(2) + "\n");

  write_manifest(opts.out_dir, "calibrate", sc.seed,
                 {{"scenario", opts.scenario_path},
                  {"robot", sc.robot_path},
                  {"correspondences", corr_path}},
                 {path});
  std::printf("calibrate ok n=%zu rmse=%s out=%s\n", corrs.size(),
              num(est.reprojection_rmse).c_str(), path.c_str());
  return kopt::kExitOk;
}

// ---------------------------------------------------------------- track

int cmd_track(CommonOpts opts, const std::string& detections_path, const std::string& set_flag,
              int particles_flag, double alpha_flag, bool write_masks) {
  kopt::ScenarioConfig sc = load_scenario_with_overrides(opts);
  const kopt::Dataset ds = load_dataset_checked(opts, sc.robot);
  const std::vector<int> ids = resolve_set(set_flag, sc.robot);
  if (particles_flag > 0) sc.tracker.n_particles = particles_flag;
  if (alpha_flag > 0) sc.tracker.alpha = alpha_flag;
  sc.tracker.validate();

  std::vector<kopt::Keypoint> tracked;
  for (int id : ids) tracked.push_back(sc.robot.candidates.by_id(id));

  // Frames are the dataset samples in id order.
  std::vector<int> frame_ids;
  for (const kopt::SceneSample& s : ds.samples) frame_ids.push_back(s.sample_id);
  std::sort(frame_ids.begin(), frame_ids.end());

  // Detections: external JSONL, or the surrogate detector keyed per sample.
  std::map<int, std::vector<kopt::Detection>> det_map;
  std::optional<kopt::DetectorModel> model;
  if (!detections_path.empty()) {
    if (!std::filesystem::exists(detections_path))
      throw kopt::ConfigError("detections file not found: " + detections_path);
    det_map = kopt::load_external_detections(detections_path, ds);
  } else {
    model = kopt::fit_detector(sc.difficulty, ids, ds);
  }
  const std::uint64_t det_seed = kopt::derive_stream(sc.seed, 5);

  kopt::Rng rng(kopt::derive_stream(sc.seed, 9));
  kopt::TrackerState state = kopt::init_tracker(sc.tracker, rng);

  const kopt::EndEffector& ee = sc.robot.ee;
  std::string traj;
  std::string iou_csv = "t,sample_id,iou\n";
  std::vector<double> ious;
  double final_ee = std::numeric_limits<double>::quiet_NaN();
  int step = 0;
  for (int sid : frame_ids) {
    const kopt::SceneSample& s = ds.sample(sid);
    std::vector<kopt::Detection> dets;
    if (model) {
      kopt::Rng det_rng(kopt::derive_stream(det_seed, static_cast<std::uint64_t>(sid)));
      dets = kopt::detect(*model, s, det_rng);
    } else if (const auto it = det_map.find(sid); it != det_map.end()) {
      dets = it->second;
    }

    kopt::track_step(state, s.q, dets, tracked, sc.robot.chain, sc.tracker, rng);
    const kopt::RigidTransform t_est =
        sc.tracker.T_cb_init * kopt::axis_angle_to_rigid(state.estimate);

    const std::vector<kopt::RigidTransform> fk = sc.robot.chain.forward_kinematics(s.q);
    double rmse_sum = 0.0;
    int rmse_n = 0;
    for (const kopt::Detection& det : dets) {
      if (det.status != kopt::DetectionStatus::detected) continue;
      const kopt::Keypoint* kp = sc.robot.candidates.find(det.keypoint_id);
      if (!kp) continue;
      const auto px = kopt::project_point(
          ds.camera, t_est, fk[static_cast<std::size_t>(kp->link)].apply(kp->offset));
      if (!px) continue;
      rmse_sum += (det.pixel - *px).squaredNorm();
      ++rmse_n;
    }
    const double reproj_rmse = rmse_n > 0 ? std::sqrt(rmse_sum / rmse_n)
                                          : std::numeric_limits<double>::quiet_NaN();

    const Eigen::Vector3d ee_base = fk[static_cast<std::size_t>(ee.link)].apply(ee.offset);
    final_ee = kopt::ee_3d_error(t_est, ee_base, s.T_cb_true.apply(ee_base));

    const kopt::BitMask mask_true = kopt::render_mask(sc.robot.chain, s.q, s.T_cb_true, ds.camera);
    const kopt::BitMask mask_est = kopt::render_mask(sc.robot.chain, s.q, t_est, ds.camera);
    const double frame_iou = kopt::iou(mask_true, mask_est);
    ious.push_back(frame_iou);
    iou_csv += std::to_string(step) + "," + std::to_string(sid) + "," + num(frame_iou) + "\n";
    if (write_masks) {
      kopt::write_pgm(mask_true, opts.out_dir + "/mask_true_" + std::to_string(step) + ".pgm");
      kopt::write_pgm(mask_est, opts.out_dir + "/mask_est_" + std::to_string(step) + ".pgm");
    }

    const kopt::json line{
        {"t", step},
        {"sample_id", sid},
        {"omega", {state.estimate.omega.x(), state.estimate.omega.y(), state.estimate.omega.z()}},
        {"b", {state.estimate.b.x(), state.estimate.b.y(), state.estimate.b.z()}},
        {"reproj_rmse", std::isfinite(reproj_rmse) ? kopt::json(reproj_rmse) : kopt::json(nullptr)},
        {"ee_error", final_ee},
        {"ess", state.ess}};
    traj += line.dump() + "\n";
    ++step;
  }

  const std::string traj_path = opts.out_dir + "/trajectory.jsonl";
  const std::string iou_path = opts.out_dir + "/iou.csv";
  kopt::write_text_file(traj_path, traj);
  kopt::write_text_file(iou_path, iou_csv);

  std::vector<std::pair<std::string, std::string>> inputs{{"scenario", opts.scenario_path},
                                                          {"robot", sc.robot_path},
                                                          {"dataset", opts.dataset_path}};
  if (!detections_path.empty()) inputs.emplace_back("detections", detections_path);
  write_manifest(opts.out_dir, "track", sc.seed, inputs, {traj_path, iou_path});

  double median_iou = std::numeric_limits<double>::quiet_NaN();
  if (!ious.empty()) {
    std::vector<double> sorted = ious;
    std::sort(sorted.begin(), sorted.end());
    median_iou = sorted[sorted.size() / 2];
  }
  std::printf("track ok frames=%d final_ee_error=%s median_iou=%s out=%s\n", step,
              num(final_ee).c_str(), num(median_iou).c_str(), traj_path.c_str());
  return kopt::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"keypoint selection, hand-eye calibration, and tool tracking toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  int m_train = 0, m_test = 0;
  int k_flag = 0, t_flag = 0;
  double gamma_flag = 0, lambda_flag = -1;
  std::string constraint_flag, set_flag, corr_path, detections_path;
  int refine_iters = 20, particles_flag = 0;
  double alpha_flag = 0;
  bool write_masks = false;

  const auto add_common = [&](CLI::App* cmd, bool needs_dataset) {
    cmd->add_option("--scenario", opts.scenario_path, "scenario config JSON");
    if (needs_dataset) cmd->add_option("--dataset", opts.dataset_path, "dataset file");
    cmd->add_option("--out", opts.out_dir, "output directory (default: scenario output_dir)");
    cmd->add_option("--seed", opts.seed, "override scenario seed");
    cmd->add_option("--threads", opts.threads, "worker thread cap");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a domain-randomized dataset");
  add_common(gen, false);
  gen->add_option("--train", m_train, "training sample count");
  gen->add_option("--test", m_test, "test sample count");

  CLI::App* optcmd = app.add_subcommand("optimize", "run the keypoint subset optimization");
  add_common(optcmd, true);
  optcmd->add_option("--K", k_flag, "subset size");
  optcmd->add_option("--T", t_flag, "iterations");
  optcmd->add_option("--gamma", gamma_flag, "weight-update temperature");
  optcmd->add_option("--lambda", lambda_flag, "3D loss weight");
  optcmd->add_option("--constraint", constraint_flag, "per-group|global");

  CLI::App* evalcmd = app.add_subcommand("evaluate", "score a keypoint set on the test split");
  add_common(evalcmd, true);
  evalcmd->add_option("--set", set_flag, "comma-separated keypoint ids (default: all)");

  CLI::App* calib = app.add_subcommand("calibrate", "camera pose from 2D-3D correspondences");
  add_common(calib, false);
  calib->add_option("--correspondences", corr_path, "correspondences JSONL");
  calib->add_option("--refine", refine_iters, "refinement iterations (default 20)");

  CLI::App* track = app.add_subcommand("track", "particle-filter tool tracking over the dataset");
  add_common(track, true);
  track->add_option("--detections", detections_path, "external detections JSONL (default: surrogate)");
  track->add_option("--set", set_flag, "comma-separated keypoint ids (default: all)");
  track->add_option("--particles", particles_flag, "particle count");
  track->add_option("--alpha", alpha_flag, "observation sharpness 1/px^2");
  track->add_flag("--masks", write_masks, "write per-frame PGM masks");

  try {
    app.parse(argc, argv);
    opts.seed_set = app.get_subcommand(0)->count("--seed") > 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kopt::kExitOk : kopt::kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opts, m_train, m_test);
    if (optcmd->parsed())
      return cmd_optimize(opts, k_flag, t_flag, gamma_flag, lambda_flag, constraint_flag);
    if (evalcmd->parsed()) return cmd_evaluate(opts, set_flag);
    if (calib->parsed()) return cmd_calibrate(opts, corr_path, refine_iters);
    if (track->parsed())
      return cmd_track(opts, detections_path, set_flag, particles_flag, alpha_flag, write_masks);
    throw kopt::ConfigError("no subcommand");
  } catch (const kopt::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kopt::kExitConfig;
  } catch (const kopt::GenerationError& e) {
    std::fprintf(stderr, "generation error: %s\n", e.what());
    return kopt::kExitGeneration;
  } catch (const kopt::OptimizationError& e) {
    std::fprintf(stderr, "optimization error: %s\n", e.what());
    return kopt::kExitOptimization;
  } catch (const kopt::EvaluationError& e) {
    std::fprintf(stderr, "evaluation error: %s\n", e.what());
    return kopt::kExitEvaluation;
  } catch (const kopt::PnpError& e) {
    std::fprintf(stderr, "pose estimation error: %s\n", e.what());
    return kopt::kExitEvaluation;
  } catch (const kopt::SchemaError& e) {
    std::fprintf(stderr, "schema error: %s\n", e.what());
    return kopt::kExitSchema;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kopt::kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kopt::kExitFailure;
  }
}
