#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kopt/dataset.hpp"
#include "kopt/detector.hpp"
#include "kopt/errors.hpp"
#include "kopt/kinematics.hpp"
#include "kopt/parallel.hpp"
#include "kopt/pnp.hpp"
#include "kopt/rng.hpp"

namespace kopt {

struct WeightVector {
  std::vector<int> ids;
  std::vector<double> w;

  static WeightVector uniform(const std::vector<int>& ids) {
    WeightVector v;
    v.ids = ids;
    v.w.assign(ids.size(), ids.empty() ? 0.0 : 1.0 / static_cast<double>(ids.size()));
    return v;
  }

  int index(int id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return static_cast<int>(i);
    throw ConfigError("weight vector: unknown keypoint id " + std::to_string(id));
  }

  double of(int id) const { return w[static_cast<std::size_t>(index(id))]; }
  double total() const {
    double s = 0.0;
    for (double v : w) s += v;
    return s;
  }
};

enum class ConstraintMode { global, per_group };

struct OptimizationConfig {
  int K = 1;
  int T = 1;
  double gamma = 1.0;
  double lambda = 50.0;
  std::uint64_t seed = 0;
  ConstraintMode constraint = ConstraintMode::global;
  double weight_floor = 1e-6;
  double miss_penalty = 0.0;  // px added to L2D per miss; 0 disables
  int refine_iters = 0;       // pose refinement after EPnP during evaluation
  int threads = 1;

  void validate(int n) const {
    if (K < 1 || K > n) throw ConfigError("optimizer: need 1 <= K <= N");
    if (T < 1) throw ConfigError("optimizer: need T >= 1");
    if (gamma <= 0) throw ConfigError("optimizer: need gamma > 0");
    if (lambda < 0) throw ConfigError("optimizer: need lambda >= 0");
    if (weight_floor < 0) throw ConfigError("optimizer: need weight_floor >= 0");
  }
};

struct KeypointLoss {
  int keypoint_id = -1;
  double l2d = std::numeric_limits<double>::infinity();
  double l3d = std::numeric_limits<double>::infinity();
  double total = std::numeric_limits<double>::infinity();
  int n_detected = 0;
  int n_missed = 0;
};

struct IterationRecord {
  int t = 0;  // 1-based
  std::vector<int> selected;
  std::vector<KeypointLoss> losses;
  double error = std::numeric_limits<double>::infinity();  // mean L_total over selected
  std::vector<double> weights_after;                       // aligned with candidate ids
  int pnp_success = 0;
  int pnp_skipped = 0;
  bool eval_failed = false;
  std::string note;
};

struct OptimizationResult {
  std::vector<int> candidate_ids;
  std::vector<int> best_set;
  double best_error = std::numeric_limits<double>::infinity();
  int best_iteration = -1;
  std::vector<IterationRecord> history;
  std::vector<double> final_weights;
};

// One weighted draw without replacement: each pick has probability
// w_i / sum of remaining weights; zero-mass remainders fall back to uniform.
namespace opt_detail {

inline int draw_index(const std::vector<double>& w, const std::vector<bool>& taken, Rng& rng) {
  double total = 0.0;
  int remaining = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!taken[i]) {
      total += w[i];
      ++remaining;
    }
  if (remaining == 0) throw ConfigError("sample_keypoints: nothing left to draw");
  if (total <= 0.0) {
    long pick = rng.uniform_int(0, remaining - 1);
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!taken[i] && pick-- == 0) return static_cast<int>(i);
  }
  const double u = rng.uniform01() * total;
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (taken[i]) continue;
    acc += w[i];
    last = static_cast<int>(i);
    if (u < acc) return last;
  }
  return last;  // u == total edge
}

}  // namespace opt_detail

// Draws K distinct ids. Global mode renormalizes over all remaining
// candidates; per-group mode applies the same rule inside each group with the
// given quotas (default one per group). Result is sorted for canonical form.
inline std::vector<int> sample_keypoints(const WeightVector& weights, int k,
                                         const std::map<int, std::vector<int>>& groups, Rng& rng,
                                         const std::map<int, int>& quota = {}) {
  std::vector<int> selected;
  if (groups.empty()) {
    if (k > static_cast<int>(weights.ids.size()))
      throw ConfigError("sample_keypoints: K exceeds candidate count");
    std::vector<bool> taken(weights.ids.size(), false);
    for (int d = 0; d < k; ++d) {
      const int i = opt_detail::draw_index(weights.w, taken, rng);
      taken[static_cast<std::size_t>(i)] = true;
      selected.push_back(weights.ids[static_cast<std::size_t>(i)]);
    }
  } else {
    int quota_sum = 0;
    for (const auto& [gid, members] : groups) {
      const auto it = quota.find(gid);
      const int q = it == quota.end() ? 1 : it->second;
      if (q < 0 || q > static_cast<int>(members.size()))
        throw ConfigError("sample_keypoints: infeasible quota for group " + std::to_string(gid));
      quota_sum += q;
    }
    if (quota_sum != k)
      throw ConfigError("sample_keypoints: group quotas sum to " + std::to_string(quota_sum) +
                        ", want K = " + std::to_string(k));
    for (const auto& [gid, members] : groups) {
      const auto it = quota.find(gid);
      const int q = it == quota.end() ? 1 : it->second;
      std::vector<double> w(members.size());
      for (std::size_t i = 0; i < members.size(); ++i)
        w[i] = weights.of(members[i]);
      std::vector<bool> taken(members.size(), false);
      for (int d = 0; d < q; ++d) {
        const int i = opt_detail::draw_index(w, taken, rng);
        taken[static_cast<std::size_t>(i)] = true;
        selected.push_back(members[static_cast<std::size_t>(i)]);
      }
    }
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

struct EvaluationOutcome {
  std::vector<KeypointLoss> losses;  // aligned with the selected-id order passed in
  double error = std::numeric_limits<double>::infinity();
  int pnp_success = 0;
  int pnp_skipped = 0;
};

// Per-sample detection + EPnP over the test split. L2D averages pixel errors
// of produced detections; L3D averages camera-frame errors of all selected
// keypoints under each sample's estimated pose. Samples with fewer than 4
// detections are pnp-skipped and contribute to L2D only.
inline EvaluationOutcome evaluate_performance(const RobotModel& robot,
                                              const std::vector<int>& selected,
                                              const DetectorModel& model, const Dataset& ds,
                                              const OptimizationConfig& cfg,
                                              std::uint64_t eval_seed) {
  if (ds.test_ids.empty()) throw EvaluationError("evaluate: empty test split");
  const int k = static_cast<int>(selected.size());
  const int ns = static_cast<int>(ds.test_ids.size());

  std::vector<const Keypoint*> kps(selected.size());
  for (int i = 0; i < k; ++i) {
    try {
      kps[static_cast<std::size_t>(i)] = &robot.candidates.by_id(selected[static_cast<std::size_t>(i)]);
    } catch (const std::invalid_argument&) {
      throw ConfigError("evaluate: keypoint " + std::to_string(selected[static_cast<std::size_t>(i)]) +
                        " not a candidate");
    }
  }

  enum : std::int8_t { kDetected = 0, kMissed = 1, kNoTruth = 2 };
  struct Partial {
    std::vector<double> err2d;
    std::vector<std::int8_t> status;
    std::vector<double> err3d;
    bool pnp_ok = false;
  };
  std::vector<Partial> partials(static_cast<std::size_t>(ns));

  parallel_for(ns, cfg.threads, [&](int pos) {
    const SceneSample& s = ds.sample(ds.test_ids[static_cast<std::size_t>(pos)]);
    Partial& part = partials[static_cast<std::size_t>(pos)];
    part.err2d.assign(selected.size(), 0.0);
    part.status.assign(selected.size(), kNoTruth);
    part.err3d.assign(selected.size(), 0.0);

    Rng rng(derive_stream(eval_seed, static_cast<std::uint64_t>(s.sample_id)));
    const std::vector<Detection> dets = detect(model, s, rng);

    const std::vector<RigidTransform> fk = robot.chain.forward_kinematics(s.q);
    std::vector<Eigen::Vector3d> base_pts(selected.size());
    for (int i = 0; i < k; ++i)
      base_pts[static_cast<std::size_t>(i)] =
          fk[static_cast<std::size_t>(kps[static_cast<std::size_t>(i)]->link)].apply(
              kps[static_cast<std::size_t>(i)]->offset);

    std::vector<Correspondence> corrs;
    for (int i = 0; i < k; ++i) {
      const Detection& det = dets[static_cast<std::size_t>(i)];
      const GroundTruth* truth = find_truth(s, det.keypoint_id);
      if (det.status == DetectionStatus::detected && truth && truth->pixel) {
        part.err2d[static_cast<std::size_t>(i)] = (det.pixel - *truth->pixel).norm();
        part.status[static_cast<std::size_t>(i)] = kDetected;
        corrs.push_back({det.pixel, base_pts[static_cast<std::size_t>(i)], 1.0});
      } else if (truth && truth->pixel) {
        part.status[static_cast<std::size_t>(i)] = kMissed;
      }
    }

    if (static_cast<int>(corrs.size()) >= 4) {
      try {
        PoseEstimate est = epnp(corrs, ds.camera);
        if (cfg.refine_iters > 0) est = refine_pose(est, corrs, ds.camera, cfg.refine_iters);
        part.pnp_ok = true;
        for (int i = 0; i < k; ++i) {
          const GroundTruth* truth = find_truth(s, selected[static_cast<std::size_t>(i)]);
          part.err3d[static_cast<std::size_t>(i)] =
              (est.T.apply(base_pts[static_cast<std::size_t>(i)]) - truth->p_cam).norm();
        }
      } catch (const PnpError&) {
        part.pnp_ok = false;
      }
    }
  });

  EvaluationOutcome out;
  std::vector<double> sum2d(selected.size(), 0.0), sum3d(selected.size(), 0.0);
  std::vector<int> cnt2d(selected.size(), 0), det_cnt(selected.size(), 0), miss_cnt(selected.size(), 0);
  int pnp_ok = 0;
  for (const Partial& part : partials) {
    if (part.pnp_ok) ++pnp_ok;
    for (int i = 0; i < k; ++i) {
      const std::size_t ii = static_cast<std::size_t>(i);
      if (part.status[ii] == kDetected) {
        sum2d[ii] += part.err2d[ii];
        ++cnt2d[ii];
        ++det_cnt[ii];
      } else if (part.status[ii] == kMissed) {
        ++miss_cnt[ii];
        if (cfg.miss_penalty > 0) {
          sum2d[ii] += cfg.miss_penalty;
          ++cnt2d[ii];
        }
      }
      if (part.pnp_ok) sum3d[ii] += part.err3d[ii];
    }
  }
  out.pnp_success = pnp_ok;
  out.pnp_skipped = ns - pnp_ok;
  if (pnp_ok == 0)
    throw EvaluationError("evaluate: every test sample pnp-skipped (degenerate keypoint set)");

  double total_sum = 0.0;
  for (int i = 0; i < k; ++i) {
    const std::size_t ii = static_cast<std::size_t>(i);
    KeypointLoss loss;
    loss.keypoint_id = selected[ii];
    loss.n_detected = det_cnt[ii];
    loss.n_missed = miss_cnt[ii];
    if (cnt2d[ii] > 0) loss.l2d = sum2d[ii] / cnt2d[ii];
    loss.l3d = sum3d[ii] / pnp_ok;
    loss.total = loss.l2d + cfg.lambda * loss.l3d;
    total_sum += loss.total;
    out.losses.push_back(loss);
  }
  out.error = total_sum / k;
  return out;
}

// Softmax reallocation of the selected weights' mass by loss; unselected
// weights untouched; the selected sum is preserved. Infinite losses get zero
// share (all-infinite falls back to uniform). A positive floor re-raises
// starved selected weights, rebalanced from the rest of the selected mass.
inline WeightVector update_weights(const WeightVector& weights, const std::vector<int>& selected,
                                   const std::map<int, double>& losses, double gamma,
                                   double floor = 0.0) {
  if (selected.empty()) throw ConfigError("update_weights: empty selection");
  WeightVector out = weights;
  std::vector<int> idx;
  double s = 0.0;
  for (int id : selected) {
    idx.push_back(out.index(id));
    s += out.w[static_cast<std::size_t>(idx.back())];
  }
  const int k = static_cast<int>(selected.size());

  std::vector<double> z(selected.size());
  double zmax = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i) {
    const auto it = losses.find(selected[static_cast<std::size_t>(i)]);
    if (it == losses.end())
      throw ConfigError("update_weights: missing loss for keypoint " +
                        std::to_string(selected[static_cast<std::size_t>(i)]));
    z[static_cast<std::size_t>(i)] = -gamma * it->second;
    zmax = std::max(zmax, z[static_cast<std::size_t>(i)]);
  }

  std::vector<double> share(selected.size());
  if (!std::isfinite(zmax)) {
    std::fill(share.begin(), share.end(), 1.0 / k);
  } else {
    double denom = 0.0;
    for (int i = 0; i < k; ++i) {
      share[static_cast<std::size_t>(i)] = std::exp(z[static_cast<std::size_t>(i)] - zmax);
      denom += share[static_cast<std::size_t>(i)];
    }
    for (double& v : share) v /= denom;
  }
  for (int i = 0; i < k; ++i)
    out.w[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] =
        s * share[static_cast<std::size_t>(i)];

  if (floor > 0.0 && s > 0.0) {
    if (s <= floor * k) {
      for (int i : idx) out.w[static_cast<std::size_t>(i)] = s / k;
    } else {
      double deficit = 0.0, surplus = 0.0;
      for (int i : idx) {
        const double v = out.w[static_cast<std::size_t>(i)];
        if (v < floor)
          deficit += floor - v;
        else
          surplus += v - floor;
      }
      if (deficit > 0.0 && surplus > 0.0) {
        for (int i : idx) {
          double& v = out.w[static_cast<std::size_t>(i)];
          if (v < floor)
            v = floor;
          else
            v -= deficit * (v - floor) / surplus;
        }
      }
    }
  }
  return out;
}

// Iterative subset search: sample a set by weight, calibrate the detector on
// the training split, score on the test split, keep the best set, and
// reallocate weight toward low-loss keypoints.
inline OptimizationResult optimize(const RobotModel& robot, const DifficultyProfile& profile,
                                   const Dataset& ds, const OptimizationConfig& cfg) {
  const int n = static_cast<int>(robot.candidates.keypoints.size());
  cfg.validate(n);
  profile.validate();
  if (ds.chain_hash != robot.hash)
    throw ConfigError("optimize: dataset was generated for a different robot config");
  if (ds.train_ids.empty() || ds.test_ids.empty())
    throw ConfigError("optimize: dataset must carry train and test splits");

  std::map<int, std::vector<int>> groups;
  if (cfg.constraint == ConstraintMode::per_group) {
    if (!robot.candidates.grouped())
      throw ConfigError("optimize: per-group constraint needs grouped candidates");
    groups = robot.candidates.groups();
  }

  OptimizationResult result;
  result.candidate_ids = ds.candidate_ids;
  WeightVector weights = WeightVector::uniform(ds.candidate_ids);
  Rng sampler(derive_stream(cfg.seed, 1));

  for (int t = 1; t <= cfg.T; ++t) {
    IterationRecord rec;
    rec.t = t;
    rec.selected = sample_keypoints(weights, cfg.K, groups, sampler);
    const DetectorModel model = fit_detector(profile, rec.selected, ds);
    try {
      const EvaluationOutcome outcome = evaluate_performance(
          robot, rec.selected, model, ds, cfg, derive_stream(cfg.seed, 100 + static_cast<std::uint64_t>(t)));
      rec.losses = outcome.losses;
      rec.error = outcome.error;
      rec.pnp_success = outcome.pnp_success;
      rec.pnp_skipped = outcome.pnp_skipped;

      if (rec.error < result.best_error) {
        result.best_error = rec.error;
        result.best_set = rec.selected;
        result.best_iteration = t;
      }
      std::map<int, double> loss_by_id;
      for (const KeypointLoss& loss : rec.losses) loss_by_id[loss.keypoint_id] = loss.total;
      weights = update_weights(weights, rec.selected, loss_by_id, cfg.gamma, cfg.weight_floor);
    } catch (const EvaluationError& err) {
      rec.eval_failed = true;
      rec.note = err.what();
    }
    rec.weights_after = weights.w;
    result.history.push_back(std::move(rec));
  }
  result.final_weights = weights.w;
  return result;
}

// --- result serialization (infinities encoded as nulls) ---

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json result_to_json(const OptimizationResult& r) {
  json hist = json::array();
  for (const IterationRecord& rec : r.history) {
    json losses = json::array();
    for (const KeypointLoss& loss : rec.losses)
      losses.push_back(json{{"id", loss.keypoint_id},
                            {"l2d", finite_or_null(loss.l2d)},
                            {"l3d", finite_or_null(loss.l3d)},
                            {"total", finite_or_null(loss.total)},
                            {"n_detected", loss.n_detected},
                            {"n_missed", loss.n_missed}});
    hist.push_back(json{{"t", rec.t},
                        {"selected", rec.selected},
                        {"losses", std::move(losses)},
                        {"error", finite_or_null(rec.error)},
                        {"weights_after", rec.weights_after},
                        {"pnp_success", rec.pnp_success},
                        {"pnp_skipped", rec.pnp_skipped},
                        {"eval_failed", rec.eval_failed},
                        {"note", rec.note}});
  }
  return json{{"candidate_ids", r.candidate_ids},
              {"best_set", r.best_set},
              {"best_error", finite_or_null(r.best_error)},
              {"best_iteration", r.best_iteration},
              {"history", std::move(hist)},
              {"final_weights", r.final_weights}};
}

}  // namespace kopt
