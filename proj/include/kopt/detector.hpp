#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kopt/dataset.hpp"
#include "kopt/errors.hpp"
#include "kopt/kinematics.hpp"
#include "kopt/rng.hpp"

namespace kopt {

struct DifficultyCoefficients {
  double a_occ = 0.0;    // occlusion -> noise / miss amplification
  double a_sym = 0.0;    // symmetry-confusion amplification when confuser co-selected
  double a_crowd = 0.0;  // crowding amplification from nearby co-selected keypoints
  double a_nuis = 0.0;   // nuisance -> noise variance amplification
  double d0 = 25.0;      // crowding length scale, px
};

struct KeypointDifficulty {
  double sigma_base = 1.0;  // px
  double miss_base = 0.0;
  std::optional<int> confuser;  // keypoint this one gets mistaken for
  double p_sym_base = 0.0;
};

struct DifficultyProfile {
  DifficultyCoefficients coeffs;
  std::map<int, KeypointDifficulty> per_keypoint;
  std::optional<KeypointDifficulty> fallback;  // used for ids without an entry
  bool clamp_to_image = false;

  const KeypointDifficulty& of(int id) const {
    const auto it = per_keypoint.find(id);
    if (it != per_keypoint.end()) return it->second;
    if (fallback) return *fallback;
    throw ConfigError("difficulty profile: no entry for keypoint " + std::to_string(id));
  }

  void validate() const {
    const auto check = [](const KeypointDifficulty& k, const std::string& what) {
      if (k.sigma_base < 0) throw ConfigError(what + ": sigma_base < 0");
      if (k.miss_base < 0 || k.miss_base > 1) throw ConfigError(what + ": miss_base outside [0,1]");
      if (k.p_sym_base < 0 || k.p_sym_base > 1)
        throw ConfigError(what + ": p_sym_base outside [0,1]");
    };
    if (coeffs.a_occ < 0 || coeffs.a_sym < 0 || coeffs.a_crowd < 0 || coeffs.a_nuis < 0)
      throw ConfigError("difficulty profile: negative coefficient");
    if (coeffs.d0 <= 0) throw ConfigError("difficulty profile: d0 must be positive");
    for (const auto& [id, k] : per_keypoint) check(k, "keypoint " + std::to_string(id));
    if (fallback) check(*fallback, "fallback difficulty");
  }
};

enum class DetectionStatus { detected, missed };

struct Detection {
  int keypoint_id = -1;
  Eigen::Vector2d pixel{0, 0};
  double rho = 0.0;
  DetectionStatus status = DetectionStatus::missed;
};

struct KeypointStats {
  double sigma_base = 0.0;
  double sigma_eff = 0.0;
  double p_miss = 0.0;
  double p_sym = 0.0;
  double occlusion_rate = 0.0;
  double crowd = 1.0;
  std::optional<int> confuser;
};

struct DetectorModel {
  std::vector<int> selected;
  std::map<int, KeypointStats> stats;
  Eigen::MatrixXd mean_pairwise_dist;  // px, indexed like `selected`
  double train_size_factor = 1.0;
  DifficultyCoefficients coeffs;
  bool clamp_to_image = false;
  int width = 0, height = 0;

  const KeypointStats& of(int id) const {
    const auto it = stats.find(id);
    if (it == stats.end())
      throw ConfigError("detector model: keypoint " + std::to_string(id) + " not in selected set");
    return it->second;
  }
};

// Mild noise reduction with more training data, capped at 2x.
inline double train_size_factor(int m) {
  const double f = 1.0 + std::log10(std::max(m, 10) / 10.0) * 0.25;
  return std::min(2.0, f);
}

inline double point_segment_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                     const Eigen::Vector3d& b) {
  const Eigen::Vector3d d = b - a;
  const double len2 = d.squaredNorm();
  if (len2 <= 0.0) return (p - a).norm();
  const double s = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
  return (p - (a + s * d)).norm();
}

// True iff the open camera-center -> point segment stays outside every link
// capsule; crossings within eps of the point itself do not count, so keypoints
// on (or just inside) their own link surface classify by the far crossing.
inline bool visible_from(const KinematicChain& chain, const std::vector<RigidTransform>& fk,
                         const Eigen::Vector3d& camera_center, const Eigen::Vector3d& point_base) {
  constexpr double kEps = 1e-4;  // m
  const Eigen::Vector3d origin = camera_center;
  const Eigen::Vector3d dir = point_base - origin;
  const double len = dir.norm();
  if (len <= kEps) return true;
  const double t_hi = 1.0 - kEps / len;
  if (t_hi <= 0.0) return true;

  for (std::size_t li = 0; li < chain.links().size(); ++li) {
    for (const Capsule& cap : chain.links()[li].capsules) {
      const Eigen::Vector3d a = fk[li].apply(cap.a);
      const Eigen::Vector3d b = fk[li].apply(cap.b);
      // Distance from segment point to the capsule core is convex in t:
      // ternary search finds its minimum on [0, t_hi].
      const auto dist = [&](double t) {
        return point_segment_distance(origin + t * dir, a, b);
      };
      double lo = 0.0, hi = t_hi;
      for (int it = 0; it < 60; ++it) {
        const double m1 = lo + (hi - lo) / 3.0;
        const double m2 = hi - (hi - lo) / 3.0;
        if (dist(m1) < dist(m2))
          hi = m2;
        else
          lo = m1;
      }
      if (dist(0.5 * (lo + hi)) < cap.radius) return false;
    }
  }
  return true;
}

inline bool occlusion_test(const KinematicChain& chain, const JointConfig& q,
                           const RigidTransform& cam_pose, const Eigen::Vector3d& point_base) {
  return visible_from(chain, chain.forward_kinematics(q), cam_pose.inverse().b, point_base);
}

// Calibrates per-keypoint error statistics on the training split. Noise grows
// with occlusion exposure and with nearby co-selected keypoints, shrinks with
// training set size; symmetry confusion intensifies when the confuser is also
// selected. This is what makes subset quality non-separable.
inline DetectorModel fit_detector(const DifficultyProfile& profile, const std::vector<int>& selected,
                                  const Dataset& ds) {
  if (ds.train_ids.empty()) throw ConfigError("fit_detector: empty training set");
  DetectorModel model;
  model.selected = selected;
  model.coeffs = profile.coeffs;
  model.clamp_to_image = profile.clamp_to_image;
  model.width = ds.camera.width;
  model.height = ds.camera.height;
  model.train_size_factor = train_size_factor(static_cast<int>(ds.train_ids.size()));

  const int k = static_cast<int>(selected.size());
  std::vector<int> tidx(selected.size());
  for (int i = 0; i < k; ++i) {
    tidx[static_cast<std::size_t>(i)] = ds.truth_index(selected[static_cast<std::size_t>(i)]);
    if (tidx[static_cast<std::size_t>(i)] < 0)
      throw ConfigError("fit_detector: keypoint " + std::to_string(selected[static_cast<std::size_t>(i)]) +
                        " not in dataset candidates");
  }

  // Mean pairwise projected distance over train samples where both project.
  Eigen::MatrixXd dist_sum = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd dist_cnt = Eigen::MatrixXd::Zero(k, k);
  std::vector<double> occluded(selected.size(), 0.0);
  for (int sid : ds.train_ids) {
    const SceneSample& s = ds.sample(sid);
    for (int i = 0; i < k; ++i) {
      const GroundTruth& gi = s.truth[static_cast<std::size_t>(tidx[static_cast<std::size_t>(i)])];
      if (!gi.visible) occluded[static_cast<std::size_t>(i)] += 1.0;
      if (!gi.pixel) continue;
      for (int j = i + 1; j < k; ++j) {
        const GroundTruth& gj = s.truth[static_cast<std::size_t>(tidx[static_cast<std::size_t>(j)])];
        if (!gj.pixel) continue;
        const double d = (*gi.pixel - *gj.pixel).norm();
        dist_sum(i, j) += d;
        dist_cnt(i, j) += 1.0;
      }
    }
  }
  model.mean_pairwise_dist = Eigen::MatrixXd::Constant(k, k, std::numeric_limits<double>::infinity());
  for (int i = 0; i < k; ++i) {
    model.mean_pairwise_dist(i, i) = 0.0;
    for (int j = i + 1; j < k; ++j) {
      if (dist_cnt(i, j) > 0) {
        const double d = dist_sum(i, j) / dist_cnt(i, j);
        model.mean_pairwise_dist(i, j) = d;
        model.mean_pairwise_dist(j, i) = d;
      }
    }
  }

  const double m_train = static_cast<double>(ds.train_ids.size());
  for (int i = 0; i < k; ++i) {
    const int id = selected[static_cast<std::size_t>(i)];
    const KeypointDifficulty& kd = profile.of(id);
    KeypointStats st;
    st.sigma_base = kd.sigma_base;
    st.confuser = kd.confuser;
    st.occlusion_rate = occluded[static_cast<std::size_t>(i)] / m_train;
    double crowd = 0.0;
    for (int j = 0; j < k; ++j) {
      if (j == i) continue;
      const double d = model.mean_pairwise_dist(i, j);
      if (std::isfinite(d)) crowd += std::exp(-d / profile.coeffs.d0);
    }
    st.crowd = 1.0 + profile.coeffs.a_crowd * crowd;
    st.sigma_eff = kd.sigma_base * (1.0 + profile.coeffs.a_occ * st.occlusion_rate) * st.crowd /
                   model.train_size_factor;
    st.p_miss = std::clamp(kd.miss_base * (1.0 + profile.coeffs.a_occ * st.occlusion_rate), 0.0, 1.0);
    const bool confuser_selected =
        kd.confuser && std::find(selected.begin(), selected.end(), *kd.confuser) != selected.end();
    st.p_sym = std::clamp(kd.p_sym_base * (confuser_selected ? 1.0 + profile.coeffs.a_sym : 1.0),
                          0.0, 1.0);
    model.stats[id] = st;
  }
  return model;
}

inline const GroundTruth* find_truth(const SceneSample& s, int keypoint_id) {
  for (const GroundTruth& g : s.truth)
    if (g.keypoint_id == keypoint_id) return &g;
  return nullptr;
}

// Confidence of a detection at `err` px from its own ground truth.
inline double detection_confidence(double err, double sigma_eff) {
  if (err == 0.0) return 1.0;
  if (sigma_eff == 0.0) return 0.0;
  return std::clamp(std::exp(-err / sigma_eff), 0.0, 1.0);
}

// Draws one stochastic detection per selected keypoint: a miss draw, then an
// identity-swap draw toward the confuser (if co-visible), then Gaussian pixel
// noise scaled by the sample's nuisance level.
inline std::vector<Detection> detect(const DetectorModel& model, const SceneSample& sample,
                                     Rng& rng) {
  std::vector<Detection> out;
  out.reserve(model.selected.size());
  for (int id : model.selected) {
    const KeypointStats& st = model.of(id);
    const GroundTruth* own = find_truth(sample, id);
    if (!own)
      throw ConfigError("detect: sample " + std::to_string(sample.sample_id) +
                        " lacks ground truth for keypoint " + std::to_string(id));
    Detection det;
    det.keypoint_id = id;
    if (rng.uniform01() < st.p_miss || !own->pixel) {
      out.push_back(det);  // missed, rho = 0
      continue;
    }
    Eigen::Vector2d target = *own->pixel;
    if (st.confuser) {
      const double u = rng.uniform01();
      const GroundTruth* conf = find_truth(sample, *st.confuser);
      if (u < st.p_sym && conf && conf->visible && conf->pixel) target = *conf->pixel;
    }
    const double noise_std = st.sigma_eff * std::sqrt(1.0 + model.coeffs.a_nuis * sample.nuisance);
    det.pixel = target + noise_std * Eigen::Vector2d(rng.normal(), rng.normal());
    if (model.clamp_to_image) {
      det.pixel.x() = std::clamp(det.pixel.x(), 0.0, static_cast<double>(model.width - 1));
      det.pixel.y() = std::clamp(det.pixel.y(), 0.0, static_cast<double>(model.height - 1));
    }
    det.status = DetectionStatus::detected;
    det.rho = detection_confidence((det.pixel - *own->pixel).norm(), st.sigma_eff);
    out.push_back(det);
  }
  return out;
}

// Reads {sample_id, keypoint_id, u, v, rho} JSONL; absence encodes a miss.
inline std::map<int, std::vector<Detection>> load_external_detections(const std::string& path,
                                                                      const Dataset& ds) {
  const std::string text = read_text_file(path);
  std::map<int, std::vector<Detection>> out;
  std::set<std::pair<int, int>> seen;
  std::size_t start = 0;
  int lineno = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (line.empty()) continue;
    const json j = parse_json(line, "detections line " + std::to_string(lineno));
    if (!j.contains("sample_id") || !j.contains("keypoint_id") || !j.contains("u") ||
        !j.contains("v") || !j.contains("rho"))
      throw SchemaError("detections line " + std::to_string(lineno) + ": missing field");
    const int sid = j.at("sample_id").get<int>();
    const int kid = j.at("keypoint_id").get<int>();
    ds.sample(sid);  // throws on unknown sample id
    if (!seen.insert({sid, kid}).second)
      throw SchemaError("detections line " + std::to_string(lineno) + ": duplicate (sample " +
                        std::to_string(sid) + ", keypoint " + std::to_string(kid) + ")");
    Detection det;
    det.keypoint_id = kid;
    det.pixel = {j.at("u").get<double>(), j.at("v").get<double>()};
    det.rho = j.at("rho").get<double>();
    if (det.rho < 0.0 || det.rho > 1.0)
      throw SchemaError("detections line " + std::to_string(lineno) + ": rho outside [0,1]");
    det.status = DetectionStatus::detected;
    out[sid].push_back(det);
  }
  return out;
}

// Scenario-config block parsing.
inline KeypointDifficulty keypoint_difficulty_from_json(const json& j) {
  KeypointDifficulty kd;
  kd.sigma_base = j.value("sigma_base", kd.sigma_base);
  kd.miss_base = j.value("miss_base", kd.miss_base);
  kd.p_sym_base = j.value("p_sym_base", kd.p_sym_base);
  if (j.contains("confuser") && !j.at("confuser").is_null())
    kd.confuser = j.at("confuser").get<int>();
  return kd;
}

inline DifficultyProfile difficulty_from_json(const json& j) {
  DifficultyProfile p;
  if (j.contains("coefficients")) {
    const json& c = j.at("coefficients");
    p.coeffs.a_occ = c.value("a_occ", p.coeffs.a_occ);
    p.coeffs.a_sym = c.value("a_sym", p.coeffs.a_sym);
    p.coeffs.a_crowd = c.value("a_crowd", p.coeffs.a_crowd);
    p.coeffs.a_nuis = c.value("a_nuis", p.coeffs.a_nuis);
    p.coeffs.d0 = c.value("d0", p.coeffs.d0);
  }
  p.clamp_to_image = j.value("clamp_to_image", false);
  if (j.contains("default")) p.fallback = keypoint_difficulty_from_json(j.at("default"));
  if (j.contains("keypoints"))
    for (const json& rec : j.at("keypoints"))
      p.per_keypoint[rec.at("id").get<int>()] = keypoint_difficulty_from_json(rec);
  p.validate();
  return p;
}

}  // namespace kopt
